// Thin typed client over the service JSON API.

import { ApiEnvelope, SketchJson, SolveResult } from "./types.js";

export class ApiError extends Error {
  constructor(
    public code: string,
    message: string,
    public status: number,
    public result?: unknown,
  ) {
    super(message);
  }
}

export class ApiClient {
  constructor(public baseUrl: string) {
    this.baseUrl = baseUrl.replace(/\/+$/, "");
  }

  private async post<T>(path: string, body: unknown): Promise<T> {
    const resp = await fetch(`${this.baseUrl}${path}`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(body),
    });
    const data = (await resp.json()) as ApiEnvelope<T>;
    if (!data.ok) {
      throw new ApiError(
        data.error?.code ?? "unknown",
        data.error?.message ?? `HTTP ${resp.status}`,
        resp.status,
        data.result,
      );
    }
    return data.result as T;
  }

  async healthz(): Promise<boolean> {
    const resp = await fetch(`${this.baseUrl}/healthz`);
    return resp.ok;
  }

  /**
   * Solve; a 409 resolves too, flagged non-converged, with the best-effort
   * sketch so the editor can still display it.
   */
  async solve(sketch: SketchJson, tol = 1e-6): Promise<SolveResult> {
    const resp = await fetch(`${this.baseUrl}/solve`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ sketch, tol }),
    });
    const data = (await resp.json()) as ApiEnvelope<SolveResult>;
    if (data.ok || (resp.status === 409 && data.result)) {
      return data.result as SolveResult;
    }
    throw new ApiError(
      data.error?.code ?? "unknown",
      data.error?.message ?? `HTTP ${resp.status}`,
      resp.status,
    );
  }

  async check(sketch: SketchJson, tol = 1e-6): Promise<boolean> {
    const r = await this.post<{ satisfied: boolean }>("/check", { sketch, tol });
    return r.satisfied;
  }

  async dof(sketch: SketchJson): Promise<{ total: number; removed: number; net: number }> {
    return this.post("/dof", { sketch });
  }

  async autoconstrain(
    sketch: SketchJson,
    checkpoint: string,
    seed = 0,
  ): Promise<SketchJson> {
    const r = await this.post<{ sketch: SketchJson }>("/autoconstrain", {
      sketch,
      checkpoint,
      seed,
    });
    return r.sketch;
  }

  async complete(
    sketch: SketchJson,
    checkpoint: string,
    k = 4,
    seed = 0,
  ): Promise<(SketchJson | null)[]> {
    const r = await this.post<{ completions: (SketchJson | null)[] }>("/complete", {
      sketch,
      checkpoint,
      k,
      seed,
    });
    return r.completions;
  }

  async render(sketch: SketchJson, hand: boolean, seed = 0): Promise<string> {
    const r = await this.post<{ png_base64: string }>("/render", { sketch, hand, seed });
    return r.png_base64;
  }
}
