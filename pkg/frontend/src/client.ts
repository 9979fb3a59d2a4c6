import { RenderRequest, RenderTransport, ServiceInfo } from "./types.js";

/** fetch-backed transport against a live render service. */
export function httpTransport(baseUrl: string): RenderTransport {
  const root = baseUrl.replace(/\/$/, "");
  return {
    async info(): Promise<ServiceInfo> {
      const res = await fetch(`${root}/info`);
      if (!res.ok) throw new Error(`info failed: HTTP ${res.status}`);
      return (await res.json()) as ServiceInfo;
    },
    async render(req: RenderRequest): Promise<Blob> {
      const res = await fetch(`${root}/render`, {
        method: "POST",
        headers: { "Content-Type": "application/json" },
        body: JSON.stringify(req),
      });
      if (!res.ok) {
        let detail = `HTTP ${res.status}`;
        try {
          const body = (await res.json()) as { error?: string };
          if (body.error) detail = body.error;
        } catch {
          // non-JSON error body; keep the status text
        }
        throw new Error(`render failed: ${detail}`);
      }
      return await res.blob();
    },
  };
}
