// Typed client for the run-directory API. Embeddings, metrics and
// trajectories are cached per epoch so scrubbing refetches nothing.

export interface Meta {
  epochs: number[];
  classes: number;
  palette: number[][];
  dataset: { kind: string; n_samples: number; class_count: number };
}

export interface SampleRecord {
  id: string;
  x: number;
  y: number;
  label: number;
  predicted: number;
  confidence: number;
}

export interface EpochEmbeddings {
  epoch: number;
  extent: [number, number, number, number];
  samples: SampleRecord[];
}

export interface TrajectoryPoint {
  epoch: number;
  x: number;
  y: number;
  predicted: number;
  confidence: number;
}

export interface NeighborRecord extends SampleRecord {
  distance: number;
}

export class ApiError extends Error {
  constructor(public status: number, message: string) {
    super(message);
  }
}

async function getJson<T>(url: string): Promise<T> {
  const res = await fetch(url);
  if (!res.ok) {
    throw new ApiError(res.status, `${url} -> ${res.status}`);
  }
  return (await res.json()) as T;
}

export class ApiClient {
  private embeddingsCache = new Map<number, Promise<EpochEmbeddings>>();
  private metricsCache = new Map<number, Promise<unknown>>();
  private trajectoryCache = new Map<string, Promise<TrajectoryPoint[]>>();

  constructor(private base: string = "") {}

  meta(): Promise<Meta> {
    return getJson<Meta>(`${this.base}/api/meta`);
  }

  embeddings(epoch: number): Promise<EpochEmbeddings> {
    let cached = this.embeddingsCache.get(epoch);
    if (!cached) {
      cached = getJson<EpochEmbeddings>(`${this.base}/api/epoch/${epoch}/embeddings`);
      this.embeddingsCache.set(epoch, cached);
    }
    return cached;
  }

  metrics(epoch: number): Promise<unknown> {
    let cached = this.metricsCache.get(epoch);
    if (!cached) {
      cached = getJson<unknown>(`${this.base}/api/epoch/${epoch}/metrics`);
      this.metricsCache.set(epoch, cached);
    }
    return cached;
  }

  trajectory(id: string): Promise<TrajectoryPoint[]> {
    let cached = this.trajectoryCache.get(id);
    if (!cached) {
      cached = getJson<{ trajectory: TrajectoryPoint[] }>(
        `${this.base}/api/sample/${encodeURIComponent(id)}/trajectory`,
      ).then((data) => data.trajectory);
      this.trajectoryCache.set(id, cached);
    }
    return cached;
  }

  neighbors(epoch: number, x: number, y: number, k = 1): Promise<NeighborRecord[]> {
    const params = new URLSearchParams({ x: String(x), y: String(y), k: String(k) });
    return getJson<{ neighbors: NeighborRecord[] }>(
      `${this.base}/api/epoch/${epoch}/neighbors?${params}`,
    ).then((data) => data.neighbors);
  }

  landscapeUrl(epoch: number): string {
    return `${this.base}/api/epoch/${epoch}/landscape.png`;
  }
}
