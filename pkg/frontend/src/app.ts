// Explorer application: epoch scrubbing with playback, landscape + scatter
// stack, sample search/pin/select, trajectory trails and a detail panel.
// All displayed values come from the server; nothing is recomputed here.

import { ApiClient, EpochEmbeddings, Meta, SampleRecord, TrajectoryPoint } from "./api.js";
import { CanvasSurface, DrawSurface, SceneState, cssColor, drawScene } from "./scatter.js";
import { Viewport } from "./view.js";

export interface ViewState {
  epoch: number;
  pinned: Set<string>;
  selected: string | null;
  playing: boolean;
  fps: number;
}

export class ExplorerApp {
  state: ViewState = { epoch: 1, pinned: new Set(), selected: null, playing: false, fps: 2 };
  meta: Meta | null = null;
  view = new Viewport(600, 600);

  private generation = 0; // stale-response guard, bumped on every epoch change
  private current: EpochEmbeddings | null = null;
  private surface: DrawSurface | null = null;
  private playTimer: ReturnType<typeof setInterval> | null = null;

  // DOM
  slider!: HTMLInputElement;
  epochLabel!: HTMLElement;
  playButton!: HTMLButtonElement;
  landscape!: HTMLImageElement;
  canvas!: HTMLCanvasElement;
  metricsPanel!: HTMLElement;
  detailPanel!: HTMLElement;
  searchBox!: HTMLInputElement;
  pinList!: HTMLElement;
  statusLine!: HTMLElement;

  constructor(private root: HTMLElement, private client: ApiClient,
              surface?: DrawSurface) {
    this.surface = surface ?? null;
    this.buildDom();
  }

  private buildDom(): void {
    const controls = document.createElement("div");
    controls.className = "controls";

    this.playButton = document.createElement("button");
    this.playButton.textContent = "Play";
    this.playButton.addEventListener("click", () => this.togglePlayback());
    controls.appendChild(this.playButton);

    this.slider = document.createElement("input");
    this.slider.type = "range";
    this.slider.min = "1";
    this.slider.max = "1";
    this.slider.step = "1";
    this.slider.value = "1";
    this.slider.addEventListener("input", () => {
      void this.setEpoch(parseInt(this.slider.value, 10));
    });
    controls.appendChild(this.slider);

    this.epochLabel = document.createElement("span");
    this.epochLabel.className = "epoch-label";
    controls.appendChild(this.epochLabel);

    this.searchBox = document.createElement("input");
    this.searchBox.type = "text";
    this.searchBox.placeholder = "sample id (enter pins)";
    this.searchBox.addEventListener("keydown", (ev) => {
      if ((ev as KeyboardEvent).key === "Enter" && this.searchBox.value) {
        void this.pin(this.searchBox.value.trim());
      }
    });
    controls.appendChild(this.searchBox);
    this.root.appendChild(controls);

    const stack = document.createElement("div");
    stack.className = "stack";
    this.landscape = document.createElement("img");
    this.landscape.className = "landscape";
    this.landscape.width = this.view.width;
    this.landscape.height = this.view.height;
    stack.appendChild(this.landscape);

    this.canvas = document.createElement("canvas");
    this.canvas.className = "scatter";
    this.canvas.width = this.view.width;
    this.canvas.height = this.view.height;
    this.canvas.addEventListener("click", (ev) => {
      const rect = this.canvas.getBoundingClientRect();
      const me = ev as MouseEvent;
      void this.handleCanvasClick(me.clientX - rect.left, me.clientY - rect.top);
    });
    stack.appendChild(this.canvas);
    this.root.appendChild(stack);

    this.metricsPanel = document.createElement("pre");
    this.metricsPanel.className = "metrics";
    this.root.appendChild(this.metricsPanel);

    this.detailPanel = document.createElement("div");
    this.detailPanel.className = "detail";
    this.root.appendChild(this.detailPanel);

    this.pinList = document.createElement("div");
    this.pinList.className = "pins";
    this.root.appendChild(this.pinList);

    this.statusLine = document.createElement("div");
    this.statusLine.className = "status";
    this.root.appendChild(this.statusLine);
  }

  private drawSurface(): DrawSurface | null {
    if (this.surface) return this.surface;
    const ctx = this.canvas.getContext("2d");
    if (ctx) {
      this.surface = new CanvasSurface(ctx, this.canvas.width, this.canvas.height);
    }
    return this.surface;
  }

  async init(): Promise<void> {
    this.meta = await this.client.meta();
    const epochs = this.meta.epochs;
    this.slider.min = String(epochs[0]);
    this.slider.max = String(epochs[epochs.length - 1]);
    await this.setEpoch(epochs[0]);
  }

  epochs(): number[] {
    return this.meta ? this.meta.epochs : [];
  }

  async setEpoch(epoch: number): Promise<void> {
    const epochs = this.epochs();
    if (epochs.length === 0 || !epochs.includes(epoch)) return; // control disables out-of-range
    const generation = ++this.generation;
    this.state.epoch = epoch;
    this.slider.value = String(epoch);

    const [embeddings, metrics] = await Promise.all([
      this.client.embeddings(epoch),
      this.client.metrics(epoch),
    ]);
    if (generation !== this.generation) return; // stale response, a newer scrub won

    this.current = embeddings;
    this.landscape.src = this.client.landscapeUrl(epoch);
    const [xMin, xMax, yMin, yMax] = embeddings.extent;
    this.view.fit({ xMin, xMax, yMin, yMax });
    // label and metrics update together with the swap
    this.epochLabel.textContent = `epoch ${epoch}/${epochs[epochs.length - 1]}`;
    this.metricsPanel.textContent = JSON.stringify(metrics, null, 2);
    await this.refreshScene(generation);
    this.renderDetail();
  }

  private async trails(upTo: number): Promise<Map<string, TrajectoryPoint[]>> {
    const trails = new Map<string, TrajectoryPoint[]>();
    for (const id of this.state.pinned) {
      const full = await this.client.trajectory(id);
      trails.set(id, full.filter((p) => p.epoch <= upTo));
    }
    return trails;
  }

  private async refreshScene(generation: number): Promise<void> {
    if (!this.current || !this.meta) return;
    const pinnedTrails = await this.trails(this.state.epoch);
    if (generation !== this.generation) return;
    const surface = this.drawSurface();
    if (!surface) return;
    const scene: SceneState = {
      samples: this.current.samples,
      palette: this.meta.palette,
      selected: this.state.selected,
      pinnedTrails,
    };
    drawScene(surface, this.view, scene);
  }

  async handleCanvasClick(sx: number, sy: number): Promise<void> {
    const [wx, wy] = this.view.toWorld(sx, sy);
    const neighbors = await this.client.neighbors(this.state.epoch, wx, wy, 1);
    if (neighbors.length > 0) {
      await this.select(neighbors[0].id);
    }
  }

  async select(id: string): Promise<void> {
    this.state.selected = id;
    await this.refreshScene(this.generation);
    this.renderDetail();
  }

  async pin(id: string): Promise<void> {
    try {
      await this.client.trajectory(id); // validates the id against the server
    } catch {
      this.statusLine.textContent = `unknown sample: ${id}`;
      return;
    }
    this.state.pinned.add(id);
    this.renderPins();
    await this.refreshScene(this.generation);
  }

  unpin(id: string): void {
    this.state.pinned.delete(id);
    this.renderPins();
    void this.refreshScene(this.generation);
  }

  private renderPins(): void {
    this.pinList.textContent = "";
    for (const id of this.state.pinned) {
      const chip = document.createElement("span");
      chip.className = "pin-chip";
      chip.textContent = id;
      chip.addEventListener("click", () => this.unpin(id));
      this.pinList.appendChild(chip);
    }
  }

  selectedRecord(): SampleRecord | null {
    if (!this.current || !this.state.selected) return null;
    return this.current.samples.find((s) => s.id === this.state.selected) ?? null;
  }

  private renderDetail(): void {
    this.detailPanel.textContent = "";
    const record = this.selectedRecord();
    if (!record) {
      this.detailPanel.textContent = "click a point to inspect it";
      return;
    }
    const title = document.createElement("div");
    title.className = "detail-id";
    title.textContent = record.id;
    this.detailPanel.appendChild(title);

    const info = document.createElement("div");
    info.className = "detail-info";
    const mismatch = record.label !== record.predicted;
    info.textContent =
      `label ${record.label}, predicted ${record.predicted} ` +
      `(${(100 * record.confidence).toFixed(1)}%)`;
    if (mismatch) {
      const flag = document.createElement("span");
      flag.className = "mismatch-flag";
      flag.textContent = " MISMATCH";
      info.appendChild(flag);
    }
    this.detailPanel.appendChild(info);

    if (this.meta) {
      const swatch = document.createElement("span");
      swatch.className = "swatch";
      swatch.style.backgroundColor = cssColor(
        this.meta.palette[record.label % this.meta.palette.length]);
      this.detailPanel.appendChild(swatch);
    }
  }

  togglePlayback(): void {
    if (this.state.playing) {
      this.stopPlayback();
      return;
    }
    this.state.playing = true;
    this.playButton.textContent = "Pause";
    this.playTimer = setInterval(() => {
      const epochs = this.epochs();
      const idx = epochs.indexOf(this.state.epoch);
      if (idx < 0 || idx + 1 >= epochs.length) {
        this.stopPlayback();
        return;
      }
      void this.setEpoch(epochs[idx + 1]);
    }, 1000 / this.state.fps);
  }

  stopPlayback(): void {
    this.state.playing = false;
    this.playButton.textContent = "Play";
    if (this.playTimer !== null) {
      clearInterval(this.playTimer);
      this.playTimer = null;
    }
  }
}
