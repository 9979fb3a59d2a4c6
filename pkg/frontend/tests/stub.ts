import { RenderRequest, RenderTransport, ServiceInfo } from "../src/types.js";

export interface StubOptions {
  k?: number;
  latencyMs?: number;
  failEvery?: number; // every nth render rejects (1-based); 0 = never
}

/** In-memory stand-in for the render service with a request log. */
export class StubServer implements RenderTransport {
  readonly requests: RenderRequest[] = [];
  readonly infoPayload: ServiceInfo;
  latencyMs: number;
  private failEvery: number;
  private renderCount = 0;

  constructor(opts: StubOptions = {}) {
    const k = opts.k ?? 1;
    this.latencyMs = opts.latencyMs ?? 0;
    this.failEvery = opts.failEvery ?? 0;
    this.infoPayload = {
      k,
      params: Array.from({ length: k }, (_, i) => ({
        name: `p${i}`,
        lo: i * 0.5,
        hi: i * 0.5 + 1.0,
      })),
      training_resolution: [128, 128],
      aabb: { lo: [-1, -1, -1], hi: [1, 1, 1] },
      max_size: 1024,
    };
  }

  async info(): Promise<ServiceInfo> {
    return structuredClone(this.infoPayload);
  }

  async render(req: RenderRequest): Promise<Blob> {
    this.renderCount += 1;
    const my = this.renderCount;
    this.requests.push(structuredClone(req));
    if (this.latencyMs > 0) {
      await new Promise((resolve) => setTimeout(resolve, this.latencyMs));
    }
    if (this.failEvery > 0 && my % this.failEvery === 0) {
      throw new Error(`stub render failure #${my}`);
    }
    // payload encodes the request so tests can assert which state a frame shows
    return new Blob([JSON.stringify(req)], { type: "image/png" });
  }
}

export async function blobState(blob: Blob): Promise<RenderRequest> {
  return JSON.parse(await blob.text()) as RenderRequest;
}
