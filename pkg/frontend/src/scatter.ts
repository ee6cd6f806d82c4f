// Scatter + trail rendering over the landscape image. Drawing goes through
// a minimal surface interface so tests can record commands where no real
// 2D context exists.

import { SampleRecord, TrajectoryPoint } from "./api.js";
import { Viewport } from "./view.js";

export interface DrawSurface {
  clear(): void;
  circle(x: number, y: number, r: number, fill: string, stroke?: string): void;
  polyline(points: [number, number][], color: string, width: number): void;
}

export class CanvasSurface implements DrawSurface {
  constructor(private ctx: CanvasRenderingContext2D,
              private width: number, private height: number) {}

  clear(): void {
    this.ctx.clearRect(0, 0, this.width, this.height);
  }

  circle(x: number, y: number, r: number, fill: string, stroke?: string): void {
    this.ctx.beginPath();
    this.ctx.arc(x, y, r, 0, 2 * Math.PI);
    this.ctx.fillStyle = fill;
    this.ctx.fill();
    if (stroke) {
      this.ctx.strokeStyle = stroke;
      this.ctx.lineWidth = 1.5;
      this.ctx.stroke();
    }
  }

  polyline(points: [number, number][], color: string, width: number): void {
    if (points.length < 2) return;
    this.ctx.beginPath();
    this.ctx.moveTo(points[0][0], points[0][1]);
    for (const [x, y] of points.slice(1)) this.ctx.lineTo(x, y);
    this.ctx.strokeStyle = color;
    this.ctx.lineWidth = width;
    this.ctx.stroke();
  }
}

export function cssColor(rgb: number[]): string {
  return `rgb(${rgb[0]}, ${rgb[1]}, ${rgb[2]})`;
}

export interface SceneState {
  samples: SampleRecord[];
  palette: number[][];
  selected: string | null;
  pinnedTrails: Map<string, TrajectoryPoint[]>; // already truncated to <= epoch
}

export function drawScene(surface: DrawSurface, view: Viewport, scene: SceneState): void {
  surface.clear();
  for (const [id, trail] of scene.pinnedTrails) {
    const pts = trail.map((p) => view.toScreen(p.x, p.y));
    surface.polyline(pts, "rgba(40, 40, 40, 0.8)", 2);
    for (const [sx, sy] of pts) {
      surface.circle(sx, sy, 2.5, "rgba(40, 40, 40, 0.8)");
    }
  }
  for (const sample of scene.samples) {
    const [sx, sy] = view.toScreen(sample.x, sample.y);
    const fill = cssColor(scene.palette[sample.label % scene.palette.length]);
    const mismatch = sample.label !== sample.predicted;
    surface.circle(sx, sy, 3, fill, mismatch ? "#000000" : undefined);
  }
  if (scene.selected) {
    const sample = scene.samples.find((s) => s.id === scene.selected);
    if (sample) {
      const [sx, sy] = view.toScreen(sample.x, sample.y);
      surface.circle(sx, sy, 6, "rgba(0,0,0,0)", "#ff0000");
    }
  }
}
