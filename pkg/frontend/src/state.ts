import { ParamInfo, RenderRequest } from "./types.js";

export interface ViewState {
  azimuth: number; // degrees, wrapped to [-180, 180]
  elevation: number; // degrees, clamped to [-90, 90]
  radius: number;
  params: number[];
  /** Full-quality edge length; previews render at PREVIEW_SIZE. */
  resolution: number;
}

export const PREVIEW_SIZE = 128;

export interface ViewLimits {
  params: ParamInfo[];
  minRadius: number;
  maxRadius: number;
  maxSize: number;
}

export function defaultLimits(params: ParamInfo[], maxSize = 1024): ViewLimits {
  return { params, minRadius: 1.2, maxRadius: 10.0, maxSize };
}

export function clamp(v: number, lo: number, hi: number): number {
  return Math.min(hi, Math.max(lo, v));
}

/** Wrap an angle into [-180, 180] so orbiting keeps it in service range. */
export function wrapAzimuth(az: number): number {
  let a = ((az + 180) % 360 + 360) % 360 - 180;
  // the service accepts both ends; keep +180 rather than flipping to -180
  if (a === -180 && az > 0) a = 180;
  return a;
}

/** Enforce every invariant the service checks; never trust raw UI input. */
export function clampState(state: ViewState, limits: ViewLimits): ViewState {
  return {
    azimuth: wrapAzimuth(state.azimuth),
    elevation: clamp(state.elevation, -90, 90),
    radius: clamp(state.radius, limits.minRadius, limits.maxRadius),
    params: limits.params.map((p, i) =>
      clamp(Number.isNaN(state.params[i]) ? p.lo : state.params[i], p.lo, p.hi),
    ),
    resolution: clamp(Math.round(state.resolution), 16, limits.maxSize),
  };
}

export function initialState(limits: ViewLimits, resolution = 256): ViewState {
  return clampState(
    {
      azimuth: 35,
      elevation: 20,
      radius: 3.0,
      params: limits.params.map((p) => (p.lo + p.hi) / 2),
      resolution,
    },
    limits,
  );
}

export function toRequest(state: ViewState, preview: boolean): RenderRequest {
  const size = preview ? Math.min(PREVIEW_SIZE, state.resolution) : state.resolution;
  return {
    azimuth: state.azimuth,
    elevation: state.elevation,
    radius: state.radius,
    params: [...state.params],
    width: size,
    height: size,
  };
}

export function statesEqual(a: ViewState, b: ViewState): boolean {
  return (
    a.azimuth === b.azimuth &&
    a.elevation === b.elevation &&
    a.radius === b.radius &&
    a.resolution === b.resolution &&
    a.params.length === b.params.length &&
    a.params.every((v, i) => v === b.params[i])
  );
}
