import { ViewState } from "./state.js";

/** Drag-to-rotate / wheel-to-zoom arithmetic, kept DOM-free for testing. */

export const DEG_PER_PIXEL = 0.45;
export const ZOOM_PER_TICK = 1.1;

export function applyDrag(state: ViewState, dxPixels: number, dyPixels: number): ViewState {
  return {
    ...state,
    azimuth: state.azimuth + dxPixels * DEG_PER_PIXEL,
    elevation: state.elevation - dyPixels * DEG_PER_PIXEL,
  };
}

export function applyWheel(state: ViewState, deltaY: number): ViewState {
  const factor = deltaY > 0 ? ZOOM_PER_TICK : 1 / ZOOM_PER_TICK;
  return { ...state, radius: state.radius * factor };
}
