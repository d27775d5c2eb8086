export interface VolumeMeta {
  dims: [number, number, number];
  spacing: [number, number, number];
  features: string[];
  params: Record<string, unknown>;
}

export interface FeatureColor {
  h: number;
  s: number;
}

export interface RenderBody {
  params: {
    weights: Record<string, number>;
    colors: Record<string, FeatureColor>;
    gain: number;
  };
  rotation: [number, number, number];
  mode: string;
  size: [number, number];
}

export interface RenderResult {
  blob: Blob;
  millis: number;
}

export class ApiError extends Error {
  constructor(
    readonly status: number,
    message: string,
  ) {
    super(message);
  }
}

async function errorMessage(response: Response): Promise<string> {
  try {
    const body = await response.json();
    if (typeof body.detail === "string") {
      return body.detail;
    }
    if (Array.isArray(body.detail)) {
      return body.detail
        .map((entry: { loc?: unknown[]; msg?: string }) =>
          `${(entry.loc ?? []).join(".")}: ${entry.msg ?? "invalid"}`)
        .join("; ");
    }
  } catch {
    /* non-JSON body */
  }
  return `request failed with status ${response.status}`;
}

export class ApiClient {
  constructor(readonly baseUrl: string = "") {}

  private url(path: string): string {
    return `${this.baseUrl}${path}`;
  }

  async uploadVolume(data: Blob | ArrayBuffer): Promise<string> {
    const response = await fetch(this.url("/api/v1/volumes"), {
      method: "POST",
      body: data,
      headers: { "Content-Type": "application/octet-stream" },
    });
    if (response.status !== 201) {
      throw new ApiError(response.status, await errorMessage(response));
    }
    const body = await response.json();
    return body.id as string;
  }

  async fetchMeta(sessionId: string): Promise<VolumeMeta> {
    const response = await fetch(this.url(`/api/v1/volumes/${sessionId}/meta`));
    if (!response.ok) {
      throw new ApiError(response.status, await errorMessage(response));
    }
    return (await response.json()) as VolumeMeta;
  }

  async render(sessionId: string, body: RenderBody): Promise<RenderResult> {
    const response = await fetch(
      this.url(`/api/v1/volumes/${sessionId}/render`),
      {
        method: "POST",
        headers: { "Content-Type": "application/json" },
        body: JSON.stringify(body),
      },
    );
    if (!response.ok) {
      throw new ApiError(response.status, await errorMessage(response));
    }
    const millis = Number(response.headers.get("X-Render-Millis") ?? "0");
    return { blob: await response.blob(), millis };
  }
}
