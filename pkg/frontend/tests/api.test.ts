import { afterEach, describe, expect, it, vi } from "vitest";

import { ApiClient, ApiError, type EditResponse } from "../src/api.js";

const EDIT_RESPONSE: EditResponse = {
  image_b64: "aW1n",
  mask_b64: "bWFzaw==",
  tokens: ["add", "a", "small", "red", "circle"],
  attn_where: [0.1, 0.05, 0.15, 0.3, 0.4],
  attn_how: [0.4, 0.1, 0.2, 0.2, 0.1],
  alpha: [
    [0.7, 0.2, 0.1],
    [0.1, 0.1, 0.8],
  ],
  step: 1,
};

function mockFetch(status: number, body: unknown) {
  const fn = vi.fn(async () => ({
    ok: status >= 200 && status < 300,
    status,
    statusText: `status ${status}`,
    json: async () => body,
  })) as unknown as typeof fetch;
  vi.stubGlobal("fetch", fn);
  return fn as ReturnType<typeof vi.fn>;
}

afterEach(() => {
  vi.unstubAllGlobals();
});

describe("ApiClient routes", () => {
  it("creates a session from a seed via POST /api/session", async () => {
    const fn = mockFetch(200, { id: "s1", image_b64: "aW1n" });
    const created = await new ApiClient().createSessionFromSeed(7);
    expect(created).toEqual({ id: "s1", image_b64: "aW1n" });
    const [url, init] = fn.mock.calls[0];
    expect(url).toBe("/api/session");
    expect(init.method).toBe("POST");
    expect(JSON.parse(init.body)).toEqual({ random_scene: 7 });
  });

  it("creates a session from a PNG payload", async () => {
    const fn = mockFetch(200, { id: "s2", image_b64: "aW1n" });
    await new ApiClient().createSessionFromPng("cG5n");
    expect(JSON.parse(fn.mock.calls[0][1].body)).toEqual({ png: "cG5n" });
  });

  it("posts edits to /api/session/{id}/edit with the instruction body", async () => {
    const fn = mockFetch(200, EDIT_RESPONSE);
    const resp = await new ApiClient().edit("s1", "remove the object at the top left");
    expect(resp).toEqual(EDIT_RESPONSE);
    const [url, init] = fn.mock.calls[0];
    expect(url).toBe("/api/session/s1/edit");
    expect(JSON.parse(init.body)).toEqual({
      instruction: "remove the object at the top left",
    });
  });

  it("opts into stochastic routing with ?sample=true", async () => {
    const fn = mockFetch(200, EDIT_RESPONSE);
    await new ApiClient().edit("s1", "x", true);
    expect(fn.mock.calls[0][0]).toBe("/api/session/s1/edit?sample=true");
  });

  it("posts undo and fetches history on the documented routes", async () => {
    const fn = mockFetch(200, { id: "s1", steps: [] });
    const client = new ApiClient();
    await client.undo("s1");
    await client.history("s1");
    expect(fn.mock.calls[0][0]).toBe("/api/session/s1/undo");
    expect(fn.mock.calls[1][0]).toBe("/api/session/s1/history");
  });

  it("prefixes an explicit base URL", async () => {
    const fn = mockFetch(200, { status: "ok", variant: "full" });
    await new ApiClient("http://host:9000").health();
    expect(fn.mock.calls[0][0]).toBe("http://host:9000/api/health");
  });
});

describe("ApiClient errors", () => {
  it("raises ApiError carrying the server's error message and code", async () => {
    mockFetch(422, { error: "instruction must be non-empty", code: 422 });
    const err = await new ApiClient()
      .edit("s1", "")
      .then(() => null, (e) => e);
    expect(err).toBeInstanceOf(ApiError);
    expect(err.code).toBe(422);
    expect(err.message).toBe("instruction must be non-empty");
  });

  it("falls back to the status text when the body is not JSON", async () => {
    const fn = vi.fn(async () => ({
      ok: false,
      status: 500,
      statusText: "boom",
      json: async () => {
        throw new Error("not json");
      },
    })) as unknown as typeof fetch;
    vi.stubGlobal("fetch", fn);
    const err = await new ApiClient().health().then(() => null, (e) => e);
    expect(err.code).toBe(500);
    expect(err.message).toBe("boom");
  });

  it("wraps network failures in ApiError code 0", async () => {
    vi.stubGlobal(
      "fetch",
      vi.fn(async () => {
        throw new TypeError("connection refused");
      }),
    );
    const err = await new ApiClient().health().then(() => null, (e) => e);
    expect(err).toBeInstanceOf(ApiError);
    expect(err.code).toBe(0);
  });
});
