// Viewport math: embedding coordinates <-> canvas pixels with pan/zoom.
// Canvas y grows downward, embedding y grows upward, so the y axis flips.

export interface Extent {
  xMin: number;
  xMax: number;
  yMin: number;
  yMax: number;
}

export class Viewport {
  scale = 1;
  tx = 0;
  ty = 0;

  constructor(public width: number, public height: number) {}

  fit(extent: Extent): void {
    const spanX = extent.xMax - extent.xMin || 1;
    const spanY = extent.yMax - extent.yMin || 1;
    this.scale = Math.min(this.width / spanX, this.height / spanY);
    const cx = (extent.xMin + extent.xMax) / 2;
    const cy = (extent.yMin + extent.yMax) / 2;
    this.tx = this.width / 2 - cx * this.scale;
    this.ty = this.height / 2 + cy * this.scale;
  }

  toScreen(x: number, y: number): [number, number] {
    return [x * this.scale + this.tx, this.ty - y * this.scale];
  }

  toWorld(sx: number, sy: number): [number, number] {
    return [(sx - this.tx) / this.scale, (this.ty - sy) / this.scale];
  }

  zoomAt(sx: number, sy: number, factor: number): void {
    const [wx, wy] = this.toWorld(sx, sy);
    this.scale *= factor;
    this.tx = sx - wx * this.scale;
    this.ty = sy + wy * this.scale;
  }

  panBy(dx: number, dy: number): void {
    this.tx += dx;
    this.ty += dy;
  }
}
