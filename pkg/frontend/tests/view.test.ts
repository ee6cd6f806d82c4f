import { describe, expect, it } from "vitest";

import { Viewport } from "../src/view.js";

describe("viewport transform", () => {
  it("round-trips screen -> world -> screen within one pixel", () => {
    const view = new Viewport(600, 600);
    view.fit({ xMin: -3.2, xMax: 4.7, yMin: -1.1, yMax: 9.4 });
    view.zoomAt(240, 180, 1.7);
    view.panBy(12, -33);
    for (const [sx, sy] of [[0, 0], [600, 600], [123.4, 456.7], [299.5, 300.5]]) {
      const [wx, wy] = view.toWorld(sx, sy);
      const [bx, by] = view.toScreen(wx, wy);
      expect(Math.abs(bx - sx)).toBeLessThan(1);
      expect(Math.abs(by - sy)).toBeLessThan(1);
    }
  });

  it("flips the y axis (embedding up = screen up)", () => {
    const view = new Viewport(100, 100);
    view.fit({ xMin: 0, xMax: 1, yMin: 0, yMax: 1 });
    const [, syLow] = view.toScreen(0.5, 0.0);
    const [, syHigh] = view.toScreen(0.5, 1.0);
    expect(syHigh).toBeLessThan(syLow);
  });

  it("keeps the fitted extent inside the canvas", () => {
    const view = new Viewport(300, 200);
    view.fit({ xMin: -5, xMax: 5, yMin: -2, yMax: 2 });
    for (const [x, y] of [[-5, -2], [5, 2], [-5, 2], [5, -2]]) {
      const [sx, sy] = view.toScreen(x, y);
      expect(sx).toBeGreaterThanOrEqual(-1e-9);
      expect(sx).toBeLessThanOrEqual(300 + 1e-9);
      expect(sy).toBeGreaterThanOrEqual(-1e-9);
      expect(sy).toBeLessThanOrEqual(200 + 1e-9);
    }
  });

  it("zoomAt keeps the anchor point fixed", () => {
    const view = new Viewport(400, 400);
    view.fit({ xMin: 0, xMax: 10, yMin: 0, yMax: 10 });
    const anchor: [number, number] = [150, 220];
    const before = view.toWorld(...anchor);
    view.zoomAt(anchor[0], anchor[1], 2.5);
    const after = view.toWorld(...anchor);
    expect(Math.abs(after[0] - before[0])).toBeLessThan(1e-9);
    expect(Math.abs(after[1] - before[1])).toBeLessThan(1e-9);
  });
});
