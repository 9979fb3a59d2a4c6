/** Wire types for the render service (see GET /info and POST /render). */

export interface ParamInfo {
  name: string;
  lo: number;
  hi: number;
}

export interface ServiceInfo {
  k: number;
  params: ParamInfo[];
  training_resolution: [number, number];
  grid_resolution?: [number, number, number];
  aabb: { lo: number[]; hi: number[] };
  max_size?: number;
}

export interface RenderRequest {
  azimuth: number;
  elevation: number;
  radius: number;
  params: number[];
  width: number;
  height: number;
  samples?: number;
}

/** Transport abstraction so the scheduler is testable without a browser. */
export interface RenderTransport {
  info(): Promise<ServiceInfo>;
  render(req: RenderRequest): Promise<Blob>;
}
