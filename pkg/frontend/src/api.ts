/** Typed client for the collage exploration service. */

export interface CheckpointInfo {
  name: string;
  patch_h: number;
  patch_w: number;
  depth: number;
  guided: boolean;
  warping: boolean;
  loss_weights: Record<string, number>;
}

export interface CorpusInfo {
  name: string;
  images: number;
  ids: string[];
  thumbnails: string[];
}

export interface AssetList {
  checkpoints: CheckpointInfo[];
  corpora: CorpusInfo[];
}

export interface TemplateInfo {
  index: number;
  provenance: string;
  thumbnail: string;
}

export interface SessionResponse {
  id: string;
  checkpoint: string;
  corpus: string;
  k: number;
  seed_lineage: Record<string, unknown>[];
  templates: TemplateInfo[];
  content: { height: number; width: number } | null;
  usage: number[] | null;
  artifacts: string[];
  artifact_urls?: Record<string, string>;
}

export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly code: string,
    message: string,
  ) {
    super(message);
  }
}

async function unwrap<T>(resp: Response): Promise<T> {
  if (!resp.ok) {
    let code = "http_error";
    let message = `${resp.status} ${resp.statusText}`;
    try {
      const body = await resp.json();
      code = body.code ?? code;
      message = body.message ?? message;
    } catch {
      // non-JSON error body; keep the status text
    }
    throw new ApiError(resp.status, code, message);
  }
  return (await resp.json()) as T;
}

export class ApiClient {
  constructor(private readonly base: string = "") {}

  listAssets(): Promise<AssetList> {
    return fetch(`${this.base}/assets`).then((r) => unwrap<AssetList>(r));
  }

  createSession(args: {
    checkpoint: string;
    corpus: string;
    k: number;
    seed: number;
  }): Promise<SessionResponse> {
    return fetch(`${this.base}/sessions`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(args),
    }).then((r) => unwrap<SessionResponse>(r));
  }

  getSession(id: string): Promise<SessionResponse> {
    return fetch(`${this.base}/sessions/${id}`).then((r) =>
      unwrap<SessionResponse>(r),
    );
  }

  resample(
    id: string,
    indices: number[] | "all",
    seed: number,
  ): Promise<SessionResponse> {
    return fetch(`${this.base}/sessions/${id}/resample`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ indices, seed }),
    }).then((r) => unwrap<SessionResponse>(r));
  }

  uploadContent(id: string, file: File): Promise<SessionResponse> {
    const form = new FormData();
    form.append("file", file);
    return fetch(`${this.base}/sessions/${id}/content`, {
      method: "PUT",
      body: form,
    }).then((r) => unwrap<SessionResponse>(r));
  }

  infer(id: string): Promise<SessionResponse> {
    return fetch(`${this.base}/sessions/${id}/infer`, { method: "POST" }).then(
      (r) => unwrap<SessionResponse>(r),
    );
  }

  artifactUrl(id: string, name: string): string {
    return `${this.base}/sessions/${id}/artifacts/${name}`;
  }

  templateUrl(id: string, index: number): string {
    return `${this.base}/sessions/${id}/templates/${index}`;
  }
}
