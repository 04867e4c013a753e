/** HTTP client for the enhancement service. All pixels come from the
 * server; the console never computes enhancement locally. */

export interface StyleInfo {
  index: number;
  name: string;
}

export interface EnhanceMeta {
  model_id: string;
  style: string | number[] | null;
  inference_ms: number;
}

export interface EnhanceResult {
  blob: Blob;
  meta: EnhanceMeta | null;
}

export class ServiceError extends Error {
  constructor(public status: number, message: string) {
    super(message);
  }
}

type FetchLike = typeof fetch;

export class ApiClient {
  constructor(
    private baseUrl: string,
    private fetchFn: FetchLike = fetch,
  ) {}

  async health(): Promise<{ ok: boolean; modelId?: string }> {
    const res = await this.fetchFn(`${this.baseUrl}/healthz`);
    if (res.status !== 200) return { ok: false };
    const body = (await res.json()) as { model_id: string };
    return { ok: true, modelId: body.model_id };
  }

  async getStyles(): Promise<StyleInfo[]> {
    const res = await this.fetchFn(`${this.baseUrl}/v1/styles`);
    if (res.status !== 200) {
      throw new ServiceError(res.status, `styles unavailable (${res.status})`);
    }
    return (await res.json()) as StyleInfo[];
  }

  /** POST the image with a style weight vector; resolves to PNG bytes. */
  async enhance(imagePng: Blob, weights: readonly number[]): Promise<EnhanceResult> {
    const form = new FormData();
    form.append("image", imagePng, "input.png");
    form.append("style", JSON.stringify(weights));
    const res = await this.fetchFn(`${this.baseUrl}/v1/enhance`, {
      method: "POST",
      body: form,
    });
    if (res.status !== 200) {
      let detail = `enhance failed (${res.status})`;
      try {
        const body = (await res.json()) as { detail?: string };
        if (body.detail) detail = body.detail;
      } catch {
        // body was not JSON; keep the status message
      }
      throw new ServiceError(res.status, detail);
    }
    const metaHeader = res.headers.get("X-Enhance-Meta");
    return {
      blob: await res.blob(),
      meta: metaHeader ? (JSON.parse(metaHeader) as EnhanceMeta) : null,
    };
  }
}
