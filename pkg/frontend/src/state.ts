import type { FeatureColor } from "./api.js";

export type ViewMode = "mip" | "mip-color" | "composite";

export interface ViewState {
  sessionId: string | null;
  features: string[];
  /** raw slider positions, 0..100 per feature */
  rawWeights: Record<string, number>;
  colors: Record<string, FeatureColor>;
  /** opacity amplification, 0..3 */
  gain: number;
  rotation: [number, number, number];
  mode: ViewMode;
  renderMillis: number | null;
  error: string | null;
  busy: boolean;
}

/** Hues sit within a 180-degree arc because the voxel hue blend is a plain
 *  weighted average; spreading them wider would average across the wrap. */
export const DEFAULT_COLORS: Record<string, FeatureColor> = {
  frangi: { h: 0, s: 0.9 },
  sobel: { h: 180, s: 0.7 },
  gvf: { h: 60, s: 0.7 },
};

export function initialState(): ViewState {
  return {
    sessionId: null,
    features: [],
    rawWeights: {},
    colors: {},
    gain: 1.0,
    rotation: [0, 0, 0],
    mode: "mip-color",
    renderMillis: null,
    error: null,
    busy: false,
  };
}

type Listener = (state: ViewState) => void;

/** Single serialized state store; every mutation flows through set(). */
export class Store {
  private state: ViewState = initialState();
  private listeners: Listener[] = [];

  get(): ViewState {
    return this.state;
  }

  set(partial: Partial<ViewState>): void {
    this.state = { ...this.state, ...partial };
    for (const listener of this.listeners) {
      listener(this.state);
    }
  }

  subscribe(listener: Listener): () => void {
    this.listeners.push(listener);
    return () => {
      this.listeners = this.listeners.filter((l) => l !== listener);
    };
  }
}
