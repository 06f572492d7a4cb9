// View state for one editing session. The view always reflects the latest
// server response: token weights, attention values and routing alphas are
// stored exactly as received, never recomputed.

import type { EditResponse, HistoryResponse } from "./api.js";

export interface StepRecord {
  step: number;
  instruction: string | null;
  image_b64: string;
  mask_b64: string | null;
}

export interface TokenChip {
  token: string;
  where: number;
  how: number;
}

export interface AlphaCell {
  layer: number;
  block: number;
  value: number;
  /** value / max of its row, for per-row normalized display intensity. */
  intensity: number;
}

export interface OverlayState {
  on: boolean;
  opacity: number;
}

export class SessionView {
  sessionId: string | null = null;
  steps: StepRecord[] = [];
  last: EditResponse | null = null;
  overlay: OverlayState = { on: false, opacity: 0.5 };
  private editPending = false;

  get step(): number {
    return this.steps.length === 0 ? 0 : this.steps[this.steps.length - 1].step;
  }

  /** Undo button is disabled iff step = 0. */
  get undoEnabled(): boolean {
    return this.step > 0;
  }

  /** Single in-flight edit per session. */
  get canSubmit(): boolean {
    return this.sessionId !== null && !this.editPending;
  }

  beginEdit(): void {
    if (this.editPending) {
      throw new Error("an edit is already in flight");
    }
    this.editPending = true;
  }

  endEdit(): void {
    this.editPending = false;
  }

  startSession(id: string, image_b64: string): void {
    this.sessionId = id;
    this.steps = [{ step: 0, instruction: null, image_b64, mask_b64: null }];
    this.last = null;
    this.editPending = false;
  }

  /** Rebuild the view from GET /history, e.g. after a page refresh. */
  restore(history: HistoryResponse): void {
    this.sessionId = history.id;
    this.steps = history.steps.map((s) => ({
      step: s.step,
      instruction: s.instruction,
      image_b64: s.image_b64,
      mask_b64: s.mask_b64,
    }));
    const tail = history.steps[history.steps.length - 1];
    this.last = tail && tail.step > 0 ? tail : null;
    this.editPending = false;
  }

  applyEdit(instruction: string, resp: EditResponse): void {
    this.steps.push({
      step: resp.step,
      instruction,
      image_b64: resp.image_b64,
      mask_b64: resp.mask_b64,
    });
    this.last = resp;
  }

  applyUndo(resp: EditResponse): void {
    this.steps = this.steps.slice(0, resp.step + 1);
    this.last = resp.step > 0 ? resp : null;
  }

  currentImage(): string | null {
    return this.steps.length === 0
      ? null
      : this.steps[this.steps.length - 1].image_b64;
  }

  currentMask(): string | null {
    return this.steps.length === 0
      ? null
      : this.steps[this.steps.length - 1].mask_b64;
  }

  /** One chip per token; weights are the server's attention values verbatim. */
  tokenChips(): TokenChip[] {
    if (this.last === null) return [];
    return this.last.tokens.map((token, i) => ({
      token,
      where: this.last!.attn_where[i],
      how: this.last!.attn_how[i],
    }));
  }

  /** Routing heatmap cells; `value` is the server alpha verbatim. */
  alphaCells(): AlphaCell[] {
    if (this.last === null) return [];
    const cells: AlphaCell[] = [];
    for (let layer = 0; layer < this.last.alpha.length; layer++) {
      const row = this.last.alpha[layer];
      const rowMax = Math.max(...row);
      for (let block = 0; block < row.length; block++) {
        cells.push({
          layer,
          block,
          value: row[block],
          intensity: rowMax > 0 ? row[block] / rowMax : 0,
        });
      }
    }
    return cells;
  }
}
