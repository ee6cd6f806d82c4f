import { afterEach, beforeEach, describe, expect, it, vi } from "vitest";

import { ApiClient, ApiError } from "../src/api.js";

function jsonResponse(body: unknown): Response {
  return new Response(JSON.stringify(body), {
    status: 200,
    headers: { "content-type": "application/json" },
  });
}

describe("ApiClient", () => {
  const fetchMock = vi.fn();

  beforeEach(() => {
    fetchMock.mockReset();
    vi.stubGlobal("fetch", fetchMock);
  });

  afterEach(() => {
    vi.unstubAllGlobals();
  });

  it("fetches embeddings once per epoch (scrub-and-return stays cached)", async () => {
    fetchMock.mockImplementation((url: string) =>
      Promise.resolve(jsonResponse({ epoch: 1, extent: [0, 1, 0, 1], samples: [] })),
    );
    const client = new ApiClient("");
    await client.embeddings(1);
    await client.embeddings(2);
    await client.embeddings(1);
    await client.embeddings(2);
    expect(fetchMock).toHaveBeenCalledTimes(2);
  });

  it("caches trajectories by sample id", async () => {
    fetchMock.mockImplementation(() =>
      Promise.resolve(jsonResponse({ id: "train-1", trajectory: [] })),
    );
    const client = new ApiClient("");
    await client.trajectory("train-1");
    await client.trajectory("train-1");
    expect(fetchMock).toHaveBeenCalledTimes(1);
  });

  it("raises ApiError with the status code on failure", async () => {
    fetchMock.mockImplementation(() =>
      Promise.resolve(new Response("{}", { status: 404 })),
    );
    const client = new ApiClient("");
    await expect(client.embeddings(9)).rejects.toBeInstanceOf(ApiError);
    await expect(client.metrics(9)).rejects.toMatchObject({ status: 404 });
  });

  it("builds neighbor queries with coordinates and k", async () => {
    fetchMock.mockImplementation((url: string) => {
      expect(url).toContain("/api/epoch/3/neighbors?");
      expect(url).toContain("x=0.5");
      expect(url).toContain("k=4");
      return Promise.resolve(jsonResponse({ neighbors: [] }));
    });
    const client = new ApiClient("");
    await client.neighbors(3, 0.5, -1.25, 4);
    expect(fetchMock).toHaveBeenCalledTimes(1);
  });

  it("points landscape urls at the png endpoint", () => {
    const client = new ApiClient("http://host:9");
    expect(client.landscapeUrl(2)).toBe("http://host:9/api/epoch/2/landscape.png");
  });
});
