/** Thin DOM layer: renders the view models and routes user actions
 * through the API client.
 *
 * Layout is two panes: the chain view on the left (glyphs, layer cards,
 * arrows) and the step view on the right (instruction block, running
 * blocks, temperature knob). A 500 ms poll keeps the snapshot current.
 */

import { ApiClient, ConflictError } from "./api.js";
import type { SessionSnapshot } from "./types.js";
import {
  buildChainView,
  buildStepView,
  sandboxChain,
  type ChainViewModel,
  type StepViewModel,
} from "./viewmodel.js";

const POLL_MS = 500;

export interface AppState {
  snapshot: SessionSnapshot | null;
  selectedStep: string | null;
  editMode: boolean;
  sandbox: boolean;
  connected: boolean;
}

export class App {
  readonly state: AppState = {
    snapshot: null,
    selectedStep: null,
    editMode: false,
    sandbox: false,
    connected: true,
  };

  private pollHandle: ReturnType<typeof setInterval> | null = null;

  constructor(
    private readonly client: ApiClient,
    private readonly root: HTMLElement,
    private readonly doc: Document = document,
  ) {}

  async openChain(chainId: string): Promise<void> {
    this.state.snapshot = await this.client.createSession(chainId);
    this.state.selectedStep = this.state.snapshot.chain.steps[0]?.id ?? null;
    this.state.sandbox = false;
    this.render();
    this.startPolling();
  }

  async openSandbox(prompt: string): Promise<void> {
    const doc = sandboxChain(prompt);
    await this.client.registerChain(doc);
    await this.openChain(doc.id);
    this.state.sandbox = true;
    this.render();
  }

  startPolling(): void {
    this.stopPolling();
    this.pollHandle = setInterval(() => void this.refresh(), POLL_MS);
  }

  stopPolling(): void {
    if (this.pollHandle !== null) clearInterval(this.pollHandle);
    this.pollHandle = null;
  }

  async refresh(): Promise<void> {
    const snapshot = this.state.snapshot;
    if (!snapshot) return;
    try {
      this.state.snapshot = await this.client.getSession(snapshot.id);
      this.state.connected = true;
    } catch {
      this.state.connected = false;
    }
    this.render();
  }

  selectStep(stepId: string | null): void {
    this.state.selectedStep = stepId;
    this.render();
  }

  toggleEditMode(): void {
    this.state.editMode = !this.state.editMode;
    this.render();
  }

  async saveEntry(entryId: string, text: string): Promise<void> {
    const snapshot = this.state.snapshot;
    if (!snapshot) return;
    try {
      await this.client.patchEntry(snapshot.id, entryId, snapshot.version, { text });
    } catch (err) {
      if (err instanceof ConflictError) {
        await this.refresh();
        return;
      }
      throw err;
    }
    await this.refresh();
  }

  async toggleFrozen(entryId: string, frozen: boolean): Promise<void> {
    const snapshot = this.state.snapshot;
    if (!snapshot) return;
    await this.client.patchEntry(snapshot.id, entryId, snapshot.version, { frozen });
    await this.refresh();
  }

  async setTemperature(stepId: string, temperature: number): Promise<void> {
    const snapshot = this.state.snapshot;
    if (!snapshot) return;
    await this.client.patchStructure(snapshot.id, snapshot.version, {
      kind: "set_temperature",
      stepId,
      temperature,
    });
    await this.client.postEvent(snapshot.id, {
      kind: "temperature_change",
      timestamp: Date.now() / 1000,
      temperature,
    });
    await this.refresh();
  }

  async runBlock(stepId: string, block: number | "all", blockCount: number): Promise<void> {
    const snapshot = this.state.snapshot;
    if (!snapshot) return;
    const { runId } = await this.client.runStep(snapshot.id, stepId, block, { blockCount });
    await this.client.waitForRun(snapshot.id, runId, POLL_MS);
    await this.refresh();
  }

  render(): void {
    const snapshot = this.state.snapshot;
    this.root.replaceChildren();
    const banner = this.el("div", this.state.connected ? "banner hidden" : "banner");
    banner.textContent = "Connection lost; retrying…";
    this.root.append(banner);
    if (!snapshot) {
      this.root.append(this.el("div", "empty", "No session open."));
      return;
    }
    const layout = this.el("div", "layout");
    layout.append(this.renderChainPane(buildChainView(snapshot, this.state.selectedStep)));
    if (this.state.selectedStep && snapshot.chain.steps.some((s) => s.id === this.state.selectedStep)) {
      layout.append(this.renderStepPane(buildStepView(snapshot, this.state.selectedStep)));
    }
    this.root.append(layout);
  }

  private renderChainPane(vm: ChainViewModel): HTMLElement {
    const pane = this.el("div", "chain-pane");
    if (vm.empty) {
      pane.append(this.el("div", "empty", "This chain has no steps yet."));
      return pane;
    }
    const maxDepth = Math.max(0, ...vm.layerCards.map((c) => c.depth));
    for (let depth = 0; depth <= maxDepth; depth += 1) {
      const row = this.el("div", "depth-row");
      for (const card of vm.layerCards.filter((c) => c.depth === depth)) {
        const node = this.el("div", "layer-card");
        node.dataset.layerId = card.layerId;
        node.style.setProperty("--stripe", `var(--tag-${card.colorTag % 8})`);
        node.append(this.el("div", "layer-name", card.name));
        for (const preview of card.previews) {
          const classes = ["entry-preview"];
          if (preview.stale) classes.push("stale");
          if (preview.frozen) classes.push("frozen");
          node.append(this.el("div", classes.join(" "), preview.text));
        }
        row.append(node);
      }
      for (const glyph of vm.glyphs.filter((g) => g.depth === depth)) {
        const classes = ["glyph", glyph.shape];
        if (glyph.selected) classes.push("selected");
        const node = this.el("button", classes.join(" "), glyph.op);
        node.dataset.stepId = glyph.stepId;
        node.addEventListener("click", () => this.selectStep(glyph.stepId));
        row.append(node);
        const arrow = vm.arrows.find((a) => a.from === glyph.stepId);
        if (arrow) {
          const marks = "↓".repeat(arrow.multiplicity);
          row.append(this.el("span", "arrow", marks));
        }
      }
      pane.append(row);
    }
    const toggle = this.el(
      "button",
      "edit-toggle",
      this.state.editMode ? "Done editing" : "Edit chain",
    );
    toggle.addEventListener("click", () => this.toggleEditMode());
    pane.append(toggle);
    return pane;
  }

  private renderStepPane(vm: StepViewModel): HTMLElement {
    const pane = this.el("div", "step-pane");
    pane.append(this.el("h2", "step-title", vm.stepId));
    if (vm.instructionBlock) {
      pane.append(this.el("div", "instruction", vm.instructionBlock));
    }

    const knob = this.el("label", "temperature-knob", "temperature ");
    const slider = this.doc.createElement("input");
    slider.type = "range";
    slider.min = "0";
    slider.max = "1";
    slider.step = "0.1";
    slider.value = String(vm.temperature);
    slider.addEventListener("change", () => {
      void this.setTemperature(vm.stepId, Number(slider.value));
    });
    knob.append(slider, this.el("span", "temperature-value", vm.temperature.toFixed(1)));
    pane.append(knob);

    for (const block of vm.blocks) {
      const node = this.el("div", block.frozen ? "running-block frozen" : "running-block");
      for (const f of [...block.fields, ...block.outputFields]) {
        const row = this.el("div", "field-row");
        row.style.setProperty("--stripe", `var(--tag-${f.colorTag % 8})`);
        row.append(this.el("span", "field-prefix", `${f.prefix}:`));
        const box = this.doc.createElement("textarea");
        box.value = f.value;
        box.disabled = !f.editable;
        if (f.entryId) {
          const entryId = f.entryId;
          box.addEventListener("change", () => void this.saveEntry(entryId, box.value));
        }
        row.append(box);
        node.append(row);
      }
      const runBtn = this.el("button", "run-block", "Run block");
      runBtn.addEventListener("click", () =>
        void this.runBlock(vm.stepId, block.index, vm.blocks.length),
      );
      node.append(runBtn);
      pane.append(node);
    }

    const runAll = this.el("button", "run-all", "Run all blocks");
    runAll.addEventListener("click", () =>
      void this.runBlock(vm.stepId, "all", vm.blocks.length),
    );
    pane.append(runAll);
    return pane;
  }

  private el(tag: string, className: string, text?: string): HTMLElement {
    const node = this.doc.createElement(tag);
    node.className = className;
    if (text !== undefined) node.textContent = text;
    return node;
  }
}

export function mount(root: HTMLElement, baseUrl: string): App {
  return new App(new ApiClient(baseUrl), root);
}
