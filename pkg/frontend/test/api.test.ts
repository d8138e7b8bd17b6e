import { afterEach, describe, expect, it, vi } from "vitest";

import { ApiClient, ApiError } from "../src/api.js";

function jsonResponse(body: unknown, status = 200): Response {
  return new Response(JSON.stringify(body), {
    status,
    headers: { "content-type": "application/json" },
  });
}

afterEach(() => vi.unstubAllGlobals());

describe("ApiClient", () => {
  it("creates sessions with a JSON body", async () => {
    const fetchMock = vi.fn().mockResolvedValue(jsonResponse({ id: "s1", k: 2 }));
    vi.stubGlobal("fetch", fetchMock);
    const client = new ApiClient("");
    const resp = await client.createSession({
      checkpoint: "smoke",
      corpus: "style",
      k: 2,
      seed: 5,
    });
    expect(resp.id).toBe("s1");
    const [url, init] = fetchMock.mock.calls[0];
    expect(url).toBe("/sessions");
    expect(init.method).toBe("POST");
    expect(JSON.parse(init.body)).toEqual({
      checkpoint: "smoke",
      corpus: "style",
      k: 2,
      seed: 5,
    });
  });

  it("sends resample index sets verbatim", async () => {
    const fetchMock = vi.fn().mockResolvedValue(jsonResponse({ id: "s1" }));
    vi.stubGlobal("fetch", fetchMock);
    await new ApiClient("").resample("s1", [0, 2], 9);
    const [url, init] = fetchMock.mock.calls[0];
    expect(url).toBe("/sessions/s1/resample");
    expect(JSON.parse(init.body)).toEqual({ indices: [0, 2], seed: 9 });
  });

  it("uploads content as multipart form data", async () => {
    const fetchMock = vi.fn().mockResolvedValue(jsonResponse({ id: "s1" }));
    vi.stubGlobal("fetch", fetchMock);
    const file = new File([new Uint8Array([1, 2, 3])], "c.png", {
      type: "image/png",
    });
    await new ApiClient("").uploadContent("s1", file);
    const [url, init] = fetchMock.mock.calls[0];
    expect(url).toBe("/sessions/s1/content");
    expect(init.method).toBe("PUT");
    expect(init.body).toBeInstanceOf(FormData);
    expect((init.body as FormData).get("file")).toBe(file);
  });

  it("surfaces service errors as ApiError with code and message", async () => {
    const fetchMock = vi
      .fn()
      .mockResolvedValue(
        jsonResponse({ code: "not_found", message: "unknown session: x" }, 404),
      );
    vi.stubGlobal("fetch", fetchMock);
    const err = await new ApiClient("")
      .getSession("x")
      .catch((e: unknown) => e);
    expect(err).toBeInstanceOf(ApiError);
    expect((err as ApiError).status).toBe(404);
    expect((err as ApiError).code).toBe("not_found");
    expect((err as ApiError).message).toMatch(/unknown session/);
  });

  it("builds artifact and template URLs", () => {
    const client = new ApiClient("http://host:8000");
    expect(client.artifactUrl("s1", "refined")).toBe(
      "http://host:8000/sessions/s1/artifacts/refined",
    );
    expect(client.templateUrl("s1", 2)).toBe(
      "http://host:8000/sessions/s1/templates/2",
    );
  });
});
