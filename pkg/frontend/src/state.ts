// Session controller: a small state machine between the API and the DOM.
// It never holds label state the server has not acknowledged; every submit
// issues exactly one POST, and stale submissions surface as warnings after
// re-syncing to the server's head pair.

import {
  ApiError,
  AuditApi,
  CandidatePayload,
  LabelValue,
  PairPayload,
  Progress,
} from "./api.js";

export type View =
  | { kind: "loading" }
  | { kind: "banner"; message: string }
  | { kind: "pair"; pair: PairPayload; warning: string | null }
  | { kind: "candidate"; offer: CandidatePayload; neighborsShown: boolean }
  | {
      kind: "pool-exhausted";
      targetIndex: number;
      classIndex: number;
      className: string | null;
    }
  | { kind: "done"; progress: Progress | null; phase: "annotation" | "replacement" };

type Listener = (view: View) => void;

export class Controller {
  private current: View = { kind: "loading" };
  private listeners: Listener[] = [];
  private retryAction: (() => Promise<void>) | null = null;
  private busy = false;

  constructor(private readonly api: AuditApi) {}

  get view(): View {
    return this.current;
  }

  subscribe(listener: Listener): void {
    this.listeners.push(listener);
    listener(this.current);
  }

  private set(view: View): void {
    this.current = view;
    for (const listener of this.listeners) listener(view);
  }

  private banner(error: unknown, retry: () => Promise<void>): void {
    const message = error instanceof Error ? error.message : String(error);
    this.retryAction = retry;
    this.set({ kind: "banner", message });
  }

  async retry(): Promise<void> {
    const action = this.retryAction;
    this.retryAction = null;
    await (action ? action() : this.start());
  }

  async start(): Promise<void> {
    this.set({ kind: "loading" });
    try {
      await this.routeFromSession();
    } catch (error) {
      this.banner(error, () => this.start());
    }
  }

  private async routeFromSession(): Promise<void> {
    const session = await this.api.getSession();
    if (session.phase === "annotation") {
      await this.showHead(null);
    } else if (session.phase === "replacement") {
      await this.showNextCandidate();
    } else {
      this.set({ kind: "done", progress: session, phase: session.replacement ? "replacement" : "annotation" });
    }
  }

  private async showHead(warning: string | null): Promise<void> {
    const next = await this.api.getNextPair();
    if (next.status === "session-complete") {
      await this.routeFromSession(); // replacement phase may start here
      return;
    }
    this.set({ kind: "pair", pair: next, warning });
  }

  async submitLabel(label: LabelValue): Promise<void> {
    if (this.current.kind !== "pair" || this.busy) return;
    const pairId = this.current.pair.pair_id;
    this.busy = true;
    try {
      await this.api.postLabel(pairId, label);
      await this.showHead(null);
    } catch (error) {
      if (error instanceof ApiError && error.code === "out-of-order") {
        // someone was ahead of us; re-sync to the server's head, never re-submit
        await this.showHead("submission was out of order; re-synced to the current pair");
      } else if (error instanceof ApiError && error.code === "completed-session") {
        await this.routeFromSession();
      } else if (error instanceof ApiError && error.code === "invalid-label") {
        await this.showHead(`rejected: ${error.message}`);
      } else {
        this.banner(error, () => this.showHead(null));
      }
    } finally {
      this.busy = false;
    }
  }

  private async showNextCandidate(): Promise<void> {
    const next = await this.api.getNextCandidate();
    if (next.status === "ok") {
      this.set({ kind: "candidate", offer: next, neighborsShown: false });
    } else if (next.status === "pool-exhausted") {
      this.set({
        kind: "pool-exhausted",
        targetIndex: next.target_index,
        classIndex: next.class_index,
        className: next.class_name,
      });
    } else {
      const progress = await this.api.getProgress();
      this.set({ kind: "done", progress, phase: "replacement" });
    }
  }

  /** The UI calls this once all three neighbor images have been displayed. */
  markNeighborsShown(): void {
    if (this.current.kind === "candidate" && !this.current.neighborsShown) {
      this.set({ ...this.current, neighborsShown: true });
    }
  }

  async decide(approved: boolean): Promise<void> {
    if (this.current.kind !== "candidate" || this.busy) return;
    if (approved && !this.current.neighborsShown) return; // approve gated on the 3-NN display
    const candidateId = this.current.offer.candidate_id;
    this.busy = true;
    try {
      await this.api.postDecision(candidateId, approved);
      await this.showNextCandidate();
    } catch (error) {
      if (error instanceof ApiError && error.status === 409) {
        await this.showNextCandidate(); // stale offer; re-sync
      } else {
        this.banner(error, () => this.showNextCandidate());
      }
    } finally {
      this.busy = false;
    }
  }

  async continueAfterExhausted(): Promise<void> {
    if (this.current.kind !== "pool-exhausted") return;
    try {
      await this.showNextCandidate();
    } catch (error) {
      this.banner(error, () => this.showNextCandidate());
    }
  }
}
