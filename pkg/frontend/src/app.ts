import { ApiClient, ApiError, type RenderBody } from "./api.js";
import { debounce, SingleFlight } from "./debounce.js";
import { DEFAULT_COLORS, Store, type ViewMode, type ViewState } from "./state.js";
import { normalizeWeights, weightSum } from "./weights.js";

export interface AppOptions {
  api: ApiClient;
  root: HTMLElement;
  /** trailing-edge debounce for parameter changes */
  debounceMs?: number;
  imageSize?: [number, number];
}

const MODES: { value: ViewMode; label: string }[] = [
  { value: "mip", label: "MIP (gray)" },
  { value: "mip-color", label: "MIP (color)" },
  { value: "composite", label: "Composite" },
];

export class App {
  readonly store = new Store();
  private readonly api: ApiClient;
  private readonly root: HTMLElement;
  private readonly imageSize: [number, number];
  private readonly renderFlight: SingleFlight;
  private readonly scheduleRender: () => void;
  private objectUrl: string | null = null;
  private dragging: { x: number; y: number } | null = null;

  private banner!: HTMLElement;
  private controls!: HTMLElement;
  private weightsBox!: HTMLElement;
  private colorsBox!: HTMLElement;
  private sumLabel!: HTMLElement;
  private image!: HTMLImageElement;
  private latencyLabel!: HTMLElement;

  constructor(options: AppOptions) {
    this.api = options.api;
    this.root = options.root;
    this.imageSize = options.imageSize ?? [256, 256];
    this.renderFlight = new SingleFlight(() => this.performRender());
    this.scheduleRender = debounce(
      () => this.renderFlight.request(),
      options.debounceMs ?? 150,
    );
    this.buildLayout();
    this.store.subscribe((state) => this.reflect(state));
  }

  private buildLayout(): void {
    this.root.innerHTML = "";

    const uploadRow = el("div", "upload-row");
    const fileInput = el("input") as HTMLInputElement;
    fileInput.type = "file";
    fileInput.id = "upload";
    fileInput.accept = ".vvol,.zip";
    fileInput.addEventListener("change", () => {
      const file = fileInput.files?.[0];
      if (file) {
        void this.uploadFile(file);
      }
    });
    uploadRow.append(label("Volume (VVOL or PNG zip): ", fileInput), fileInput);

    this.banner = el("div", "banner");
    this.banner.id = "banner";
    this.banner.hidden = true;

    this.controls = el("fieldset", "controls") as HTMLFieldSetElement;
    (this.controls as HTMLFieldSetElement).disabled = true;

    this.weightsBox = el("div", "weights");
    this.weightsBox.id = "weights";
    this.sumLabel = el("span", "weight-sum");
    this.sumLabel.id = "weight-sum";
    this.colorsBox = el("div", "colors");

    const gain = this.slider("gain", 0, 3, 0.05, 1.0, (value) => {
      this.store.set({ gain: value });
      this.scheduleRender();
    });

    const rotationBox = el("div", "rotation");
    (["x", "y", "z"] as const).forEach((axis, index) => {
      const input = el("input") as HTMLInputElement;
      input.type = "number";
      input.id = `rot-${axis}`;
      input.step = "5";
      input.value = "0";
      input.addEventListener("input", () => {
        const rotation = [...this.store.get().rotation] as [number, number, number];
        rotation[index] = Number(input.value) || 0;
        this.store.set({ rotation });
        this.scheduleRender();
      });
      rotationBox.append(label(`r${axis} `, input), input);
    });

    const modeSelect = el("select") as HTMLSelectElement;
    modeSelect.id = "mode";
    for (const { value, label: text } of MODES) {
      const option = el("option") as HTMLOptionElement;
      option.value = value;
      option.textContent = text;
      modeSelect.append(option);
    }
    modeSelect.value = "mip-color";
    modeSelect.addEventListener("change", () => {
      this.store.set({ mode: modeSelect.value as ViewMode });
      this.scheduleRender();
    });

    this.controls.append(
      heading("Feature weights"), this.weightsBox,
      label("normalized sum: ", this.sumLabel), this.sumLabel,
      heading("Feature colors"), this.colorsBox,
      heading("Gain"), gain,
      heading("Rotation"), rotationBox,
      heading("View"), modeSelect,
    );

    this.image = el("img", "view") as HTMLImageElement;
    this.image.id = "view";
    this.image.width = this.imageSize[0];
    this.image.height = this.imageSize[1];
    this.image.draggable = false;
    this.wireDragRotate();

    this.latencyLabel = el("div", "latency");
    this.latencyLabel.id = "latency";

    this.root.append(uploadRow, this.banner, this.controls, this.image,
                     this.latencyLabel);
  }

  private wireDragRotate(): void {
    this.image.addEventListener("pointerdown", (event) => {
      this.dragging = { x: event.clientX, y: event.clientY };
      this.image.setPointerCapture?.(event.pointerId);
    });
    this.image.addEventListener("pointermove", (event) => {
      if (!this.dragging) {
        return;
      }
      const dx = event.clientX - this.dragging.x;
      const dy = event.clientY - this.dragging.y;
      this.dragging = { x: event.clientX, y: event.clientY };
      const [rx, ry, rz] = this.store.get().rotation;
      this.store.set({ rotation: [rx - dy * 0.5, ry + dx * 0.5, rz] });
      this.syncRotationInputs();
      this.scheduleRender();
    });
    const stop = () => {
      this.dragging = null;
    };
    this.image.addEventListener("pointerup", stop);
    this.image.addEventListener("pointerleave", stop);
  }

  private slider(
    id: string, min: number, max: number, step: number, value: number,
    onInput: (value: number) => void,
  ): HTMLInputElement {
    const input = el("input") as HTMLInputElement;
    input.type = "range";
    input.id = id;
    input.min = String(min);
    input.max = String(max);
    input.step = String(step);
    input.value = String(value);
    input.addEventListener("input", () => onInput(Number(input.value)));
    return input;
  }

  /** Upload a VVOL (or PNG-zip) payload and bind a fresh session. */
  async uploadFile(file: Blob): Promise<void> {
    try {
      const sessionId = await this.api.uploadVolume(file);
      const meta = await this.api.fetchMeta(sessionId);
      const rawWeights: Record<string, number> = {};
      const colors: Record<string, { h: number; s: number }> = {};
      for (const name of meta.features) {
        rawWeights[name] = 50; // equal raw positions -> uniform weights
        colors[name] = DEFAULT_COLORS[name] ?? { h: 0, s: 0 };
      }
      this.store.set({
        sessionId,
        features: meta.features,
        rawWeights,
        colors,
        error: null,
      });
      this.rebuildFeatureControls();
      (this.controls as HTMLFieldSetElement).disabled = false;
      this.scheduleRender();
    } catch (error) {
      this.store.set({ error: describe(error) });
    }
  }

  private rebuildFeatureControls(): void {
    const state = this.store.get();
    this.weightsBox.innerHTML = "";
    this.colorsBox.innerHTML = "";
    for (const name of state.features) {
      const weight = this.slider(
        `weight-${name}`, 0, 100, 1, state.rawWeights[name] ?? 0,
        (value) => {
          const rawWeights = { ...this.store.get().rawWeights, [name]: value };
          this.store.set({ rawWeights });
          this.updateWeightLabels();
          this.scheduleRender();
        },
      );
      const normalized = el("span", "wnorm");
      normalized.id = `wnorm-${name}`;
      const row = el("div", "weight-row");
      row.append(label(`${name} `, weight), weight, normalized);
      this.weightsBox.append(row);

      const hue = el("input") as HTMLInputElement;
      hue.type = "number";
      hue.id = `hue-${name}`;
      hue.min = "0";
      hue.max = "359.9";
      hue.value = String(state.colors[name]?.h ?? 0);
      const sat = el("input") as HTMLInputElement;
      sat.type = "number";
      sat.id = `sat-${name}`;
      sat.min = "0";
      sat.max = "1";
      sat.step = "0.05";
      sat.value = String(state.colors[name]?.s ?? 0);
      const onColor = () => {
        const colors = {
          ...this.store.get().colors,
          [name]: { h: Number(hue.value) || 0, s: Number(sat.value) || 0 },
        };
        this.store.set({ colors });
        this.scheduleRender();
      };
      hue.addEventListener("input", onColor);
      sat.addEventListener("input", onColor);
      const colorRow = el("div", "color-row");
      colorRow.append(label(`${name} hue `, hue), hue, label("sat ", sat), sat);
      this.colorsBox.append(colorRow);
    }
    this.updateWeightLabels();
  }

  /** Normalized weights for display and requests; null when all sliders are 0. */
  displayedWeights(): Map<string, number> | null {
    const state = this.store.get();
    try {
      return normalizeWeights(state.rawWeights);
    } catch {
      return null;
    }
  }

  private updateWeightLabels(): void {
    const normalized = this.displayedWeights();
    const state = this.store.get();
    for (const name of state.features) {
      const span = this.root.querySelector(`#wnorm-${name}`);
      if (span) {
        span.textContent = normalized
          ? normalized.get(name)!.toFixed(3)
          : "-";
      }
    }
    this.sumLabel.textContent = normalized
      ? weightSum(normalized).toFixed(3)
      : "-";
  }

  private syncRotationInputs(): void {
    const [rx, ry, rz] = this.store.get().rotation;
    const set = (id: string, value: number) => {
      const input = this.root.querySelector<HTMLInputElement>(`#${id}`);
      if (input) {
        input.value = String(Math.round(value * 10) / 10);
      }
    };
    set("rot-x", rx);
    set("rot-y", ry);
    set("rot-z", rz);
  }

  private buildRenderBody(state: ViewState,
                          weights: Map<string, number>): RenderBody {
    return {
      params: {
        weights: Object.fromEntries(weights),
        colors: state.colors,
        gain: state.gain,
      },
      rotation: state.rotation,
      mode: state.mode,
      size: this.imageSize,
    };
  }

  private async performRender(): Promise<void> {
    const state = this.store.get();
    if (!state.sessionId) {
      return;
    }
    const weights = this.displayedWeights();
    if (!weights) {
      // never send all-zero weights; the server would reject them anyway
      this.store.set({ error: "raise at least one feature weight" });
      return;
    }
    this.store.set({ busy: true });
    try {
      const result = await this.api.render(
        state.sessionId, this.buildRenderBody(state, weights));
      const url = URL.createObjectURL(result.blob);
      if (this.objectUrl) {
        URL.revokeObjectURL(this.objectUrl);
      }
      this.objectUrl = url;
      this.image.src = url;
      this.store.set({ renderMillis: result.millis, error: null, busy: false });
    } catch (error) {
      // surface the failure but keep every control exactly as it was
      this.store.set({ error: describe(error), busy: false });
    }
  }

  private reflect(state: ViewState): void {
    this.banner.hidden = state.error === null;
    this.banner.textContent = state.error ?? "";
    this.latencyLabel.textContent =
      state.renderMillis === null
        ? ""
        : `render ${state.renderMillis.toFixed(1)} ms`;
  }
}

function el(tag: string, className?: string): HTMLElement {
  const node = document.createElement(tag);
  if (className) {
    node.className = className;
  }
  return node;
}

function heading(text: string): HTMLElement {
  const node = el("h3");
  node.textContent = text;
  return node;
}

function label(text: string, target: HTMLElement): HTMLLabelElement {
  const node = el("label") as HTMLLabelElement;
  node.textContent = text;
  if (target.id) {
    node.htmlFor = target.id;
  }
  return node;
}

function describe(error: unknown): string {
  if (error instanceof ApiError) {
    return `server error ${error.status}: ${error.message}`;
  }
  return error instanceof Error ? error.message : String(error);
}
