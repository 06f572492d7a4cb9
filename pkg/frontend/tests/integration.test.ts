// Mocked-server round trip: a fake service answers the documented routes and
// the test asserts that every quantity the view exposes is bit-identical to a
// field of a server response — the UI performs no model math of its own.

import { afterEach, describe, expect, it, vi } from "vitest";

import { ApiClient, type EditResponse } from "../src/api.js";
import { SessionView } from "../src/state.js";

const INITIAL_IMAGE = "aW5pdGlhbA==";

const EDIT_1: EditResponse = {
  image_b64: "ZWRpdDE=",
  mask_b64: "bWFzazE=",
  tokens: ["add", "a", "large", "blue", "square", "to", "the", "top", "left"],
  attn_where: [
    0.0412, 0.0231, 0.0904, 0.1133, 0.2207, 0.0315, 0.0287, 0.2411, 0.21,
  ],
  attn_how: [
    0.3104, 0.0211, 0.1593, 0.2788, 0.1001, 0.0402, 0.0311, 0.0305, 0.0285,
  ],
  alpha: [
    [0.8123, 0.1204, 0.0673],
    [0.0342, 0.0517, 0.9141],
  ],
  step: 1,
};

function mockServer() {
  const calls: string[] = [];
  const fn = vi.fn(async (url: string, init?: RequestInit) => {
    calls.push(`${init?.method ?? "GET"} ${url}`);
    let body: unknown;
    if (url === "/api/session") {
      body = { id: "sess-1", image_b64: INITIAL_IMAGE };
    } else if (url === "/api/session/sess-1/edit") {
      body = EDIT_1;
    } else if (url === "/api/session/sess-1/undo") {
      body = {
        image_b64: INITIAL_IMAGE,
        mask_b64: null,
        tokens: [],
        attn_where: [],
        attn_how: [],
        alpha: [],
        step: 0,
      };
    } else if (url === "/api/session/sess-1/history") {
      body = {
        id: "sess-1",
        steps: [
          {
            step: 0,
            instruction: null,
            image_b64: INITIAL_IMAGE,
            mask_b64: null,
            tokens: [],
            attn_where: [],
            attn_how: [],
            alpha: [],
          },
          { ...EDIT_1, instruction: "add a large blue square to the top left" },
        ],
      };
    } else {
      return {
        ok: false,
        status: 404,
        statusText: "not found",
        json: async () => ({ error: `unknown route ${url}`, code: 404 }),
      };
    }
    return { ok: true, status: 200, statusText: "OK", json: async () => body };
  }) as unknown as typeof fetch;
  vi.stubGlobal("fetch", fn);
  return calls;
}

afterEach(() => {
  vi.unstubAllGlobals();
});

describe("session round trip against a mocked server", () => {
  it("create -> edit -> undo restores the initial image verbatim", async () => {
    const calls = mockServer();
    const api = new ApiClient();
    const view = new SessionView();

    const created = await api.createSessionFromSeed(7);
    view.startSession(created.id, created.image_b64);
    expect(view.currentImage()).toBe(INITIAL_IMAGE);
    expect(view.undoEnabled).toBe(false);

    view.beginEdit();
    const edited = await api.edit(
      view.sessionId!,
      "add a large blue square to the top left",
    );
    view.applyEdit("add a large blue square to the top left", edited);
    view.endEdit();
    expect(view.step).toBe(1);
    expect(view.undoEnabled).toBe(true);

    const undone = await api.undo(view.sessionId!);
    view.applyUndo(undone);
    expect(view.step).toBe(0);
    expect(view.currentImage()).toBe(INITIAL_IMAGE);
    expect(view.undoEnabled).toBe(false);

    expect(calls).toEqual([
      "POST /api/session",
      "POST /api/session/sess-1/edit",
      "POST /api/session/sess-1/undo",
    ]);
  });

  it("every displayed quantity is a server response field, bit-identical", async () => {
    mockServer();
    const api = new ApiClient();
    const view = new SessionView();
    const created = await api.createSessionFromSeed(7);
    view.startSession(created.id, created.image_b64);
    view.applyEdit("x", await api.edit(view.sessionId!, "x"));

    const chips = view.tokenChips();
    expect(chips.map((c) => c.token)).toEqual(EDIT_1.tokens);
    expect(chips.map((c) => c.where)).toEqual(EDIT_1.attn_where);
    expect(chips.map((c) => c.how)).toEqual(EDIT_1.attn_how);
    for (const cell of view.alphaCells()) {
      expect(Object.is(cell.value, EDIT_1.alpha[cell.layer][cell.block])).toBe(
        true,
      );
    }
    expect(view.currentImage()).toBe(EDIT_1.image_b64);
    expect(view.currentMask()).toBe(EDIT_1.mask_b64);
  });

  it("restores a session from GET /history after a refresh", async () => {
    mockServer();
    const api = new ApiClient();
    const view = new SessionView();
    view.restore(await api.history("sess-1"));
    expect(view.sessionId).toBe("sess-1");
    expect(view.steps).toHaveLength(2);
    expect(view.step).toBe(1);
    expect(view.currentImage()).toBe(EDIT_1.image_b64);
    expect(view.tokenChips().map((c) => c.token)).toEqual(EDIT_1.tokens);
  });

  it("surfaces server errors without mutating the view", async () => {
    mockServer();
    const api = new ApiClient();
    const view = new SessionView();
    const created = await api.createSessionFromSeed(7);
    view.startSession(created.id, created.image_b64);
    const err = await api
      .edit("no-such-session", "x")
      .then(() => null, (e) => e);
    expect(err.code).toBe(404);
    expect(view.step).toBe(0);
    expect(view.currentImage()).toBe(INITIAL_IMAGE);
  });
});
