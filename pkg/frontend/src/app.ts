import { ApiError, ReviewApi } from "./api.js";
import type { QueueItem, Tally, Verdict } from "./types.js";
import { checkVerdict } from "./validation.js";

export interface ConsoleOptions {
  /** Tally refresh period; the service has no push channel, so we poll. */
  pollIntervalMs?: number;
  /** Delay before a queued (network-failed) verdict is retried. */
  retryDelayMs?: number;
}

interface PendingVerdict {
  item: QueueItem;
  verdict: Verdict;
  editedText?: string;
}

const EMPTY_TALLY: Tally = {
  counts: { adopted: 0, partial: 0, rejected: 0 },
  rates: { adopted: 0, partial: 0, rejected: 0 },
  total: 0,
};

export class ReviewConsole {
  private items: QueueItem[] = [];
  private tally: Tally = EMPTY_TALLY;
  private submitted = new Set<string>();
  private retryQueue: PendingVerdict[] = [];
  private banner = "";
  private pollTimer: ReturnType<typeof setInterval> | undefined;
  private retryTimer: ReturnType<typeof setTimeout> | undefined;
  private readonly pollIntervalMs: number;
  private readonly retryDelayMs: number;

  constructor(
    private readonly root: HTMLElement,
    private readonly api: ReviewApi,
    private readonly runId: string,
    private readonly reviewerId: string,
    options: ConsoleOptions = {},
  ) {
    this.pollIntervalMs = options.pollIntervalMs ?? 2000;
    this.retryDelayMs = options.retryDelayMs ?? 2000;
  }

  async start(): Promise<void> {
    try {
      await this.api.fetchRun(this.runId);
    } catch (err) {
      if (err instanceof ApiError && err.status === 404) {
        this.renderErrorPage(`Run not found: ${this.runId}`);
        return;
      }
      throw err;
    }
    await this.refreshQueue();
    await this.refreshTally();
    this.render();
    this.pollTimer = setInterval(() => {
      void this.refreshTally().then(() => this.renderTally());
    }, this.pollIntervalMs);
  }

  stop(): void {
    if (this.pollTimer !== undefined) clearInterval(this.pollTimer);
    if (this.retryTimer !== undefined) clearTimeout(this.retryTimer);
  }

  async refreshQueue(): Promise<void> {
    try {
      const items: QueueItem[] = [];
      let cursor: string | undefined;
      do {
        const page = await this.api.fetchQueue(this.runId, this.reviewerId, cursor);
        items.push(...page.items);
        cursor = page.cursor ?? undefined;
      } while (cursor);
      this.items = items.filter((i) => !this.submitted.has(i.candidate_id));
      this.banner = "";
    } catch {
      // network hiccup: keep what we have, offer a retry
      this.banner = "Could not reach the review service; will retry.";
    }
  }

  async refreshTally(): Promise<void> {
    try {
      this.tally = await this.api.fetchTally(this.runId);
    } catch {
      this.banner = "Could not refresh the tally; will retry.";
    }
  }

  /** Handle one verdict click; returns false when blocked client-side. */
  async submit(
    candidateId: string,
    verdict: Verdict,
    editedText?: string,
  ): Promise<boolean> {
    const item = this.items.find((i) => i.candidate_id === candidateId);
    if (!item) return false;
    if (this.submitted.has(candidateId)) return false; // idempotency guard
    const check = checkVerdict(verdict, item.candidate_text, editedText);
    if (!check.ok) {
      this.showCardError(candidateId, check.message ?? "Invalid verdict.");
      return false;
    }
    this.submitted.add(candidateId);
    this.removeCard(candidateId); // optimistic
    try {
      await this.api.submitVerdict(
        candidateId,
        verdict,
        this.reviewerId,
        verdict === "partially_adopted" ? editedText : undefined,
      );
    } catch (err) {
      if (err instanceof ApiError && err.status === 409) {
        this.banner = "Already reviewed by you; removed from the queue.";
        this.renderBanner();
      } else if (err instanceof ApiError) {
        // validation rejected server-side: restore the card
        this.submitted.delete(candidateId);
        this.items.unshift(item);
        this.render();
        this.showCardError(candidateId, err.message);
        return false;
      } else {
        // network failure: queue the verdict and retry later
        this.submitted.delete(candidateId);
        this.retryQueue.push({ item, verdict, editedText });
        this.banner = "Submission queued; retrying shortly.";
        this.renderBanner();
        this.scheduleRetry();
        return true;
      }
    }
    await this.refreshTally();
    this.render();
    return true;
  }

  private scheduleRetry(): void {
    if (this.retryTimer !== undefined) return;
    this.retryTimer = setTimeout(() => {
      this.retryTimer = undefined;
      const pending = this.retryQueue.splice(0);
      for (const entry of pending) {
        if (!this.items.some((i) => i.candidate_id === entry.item.candidate_id)) {
          this.items.push(entry.item);
        }
        void this.submit(entry.item.candidate_id, entry.verdict, entry.editedText);
      }
    }, this.retryDelayMs);
  }

  pendingRetries(): number {
    return this.retryQueue.length;
  }

  queueLength(): number {
    return this.items.length;
  }

  currentTally(): Tally {
    return this.tally;
  }

  // --- rendering ---------------------------------------------------------

  private removeCard(candidateId: string): void {
    this.items = this.items.filter((i) => i.candidate_id !== candidateId);
    this.render();
  }

  private showCardError(candidateId: string, message: string): void {
    const card = this.root.querySelector(
      `[data-candidate-id="${candidateId}"] .card-error`,
    );
    if (card) card.textContent = message;
  }

  private renderErrorPage(message: string): void {
    this.root.innerHTML = "";
    const error = document.createElement("div");
    error.className = "error-page";
    error.textContent = message;
    this.root.appendChild(error);
  }

  private renderBanner(): void {
    const banner = this.root.querySelector(".banner");
    if (banner) banner.textContent = this.banner;
  }

  render(): void {
    this.root.innerHTML = "";
    const banner = document.createElement("div");
    banner.className = "banner";
    banner.textContent = this.banner;
    this.root.appendChild(banner);

    const queue = document.createElement("div");
    queue.className = "queue";
    if (this.items.length === 0) {
      const empty = document.createElement("div");
      empty.className = "empty-state";
      empty.textContent = "All candidates reviewed. Thank you!";
      queue.appendChild(empty);
    } else {
      for (const item of this.items) {
        queue.appendChild(this.renderCard(item));
      }
    }
    this.root.appendChild(queue);
    this.root.appendChild(this.renderTallyPanel());
  }

  private renderCard(item: QueueItem): HTMLElement {
    const card = document.createElement("div");
    card.className = "card";
    card.dataset.candidateId = item.candidate_id;

    const columns = document.createElement("div");
    columns.className = "columns";
    const original = document.createElement("div");
    original.className = "original";
    original.textContent = item.original_input;
    const candidate = document.createElement("div");
    candidate.className = "candidate-text";
    candidate.textContent = item.candidate_text;
    columns.append(original, candidate);
    card.appendChild(columns);

    if (item.persona_brief) {
      const persona = document.createElement("div");
      persona.className = "persona";
      persona.textContent = `Persona: ${item.persona_brief}`;
      card.appendChild(persona);
    }
    const round = document.createElement("span");
    round.className = "round";
    round.textContent = `round ${item.round}`;
    card.appendChild(round);

    // pre-filled with the candidate text: partial adoption is usually a
    // small correction
    const editBox = document.createElement("textarea");
    editBox.className = "edit-box";
    editBox.value = item.candidate_text;
    card.appendChild(editBox);

    const error = document.createElement("div");
    error.className = "card-error";
    card.appendChild(error);

    const actions = document.createElement("div");
    actions.className = "actions";
    actions.append(
      this.actionButton(item, "adopted", "Adopt", "btn-adopt"),
      this.actionButton(item, "partially_adopted", "Partially adopt", "btn-partial"),
      this.actionButton(item, "rejected", "Reject", "btn-reject"),
    );
    card.appendChild(actions);
    return card;
  }

  private actionButton(
    item: QueueItem,
    verdict: Verdict,
    label: string,
    className: string,
  ): HTMLButtonElement {
    const button = document.createElement("button");
    button.className = className;
    button.textContent = label;
    button.addEventListener("click", () => {
      const card = this.root.querySelector(
        `[data-candidate-id="${item.candidate_id}"]`,
      );
      const editBox = card?.querySelector<HTMLTextAreaElement>(".edit-box");
      void this.submit(item.candidate_id, verdict, editBox?.value);
    });
    return button;
  }

  private renderTally(): void {
    const panel = this.root.querySelector(".tally-panel");
    if (panel) panel.replaceWith(this.renderTallyPanel());
  }

  private renderTallyPanel(): HTMLElement {
    const panel = document.createElement("div");
    panel.className = "tally-panel";
    const { counts, rates, total } = this.tally;
    const rows: Array<[string, number, number]> = [
      ["adopted", counts.adopted, rates.adopted],
      ["partial", counts.partial, rates.partial],
      ["rejected", counts.rejected, rates.rejected],
    ];
    for (const [name, count, rate] of rows) {
      const row = document.createElement("div");
      row.className = `tally-${name}`;
      row.dataset.count = String(count);
      row.dataset.rate = rate.toFixed(4);
      row.textContent = `${name}: ${count} (${(rate * 100).toFixed(1)}%)`;
      panel.appendChild(row);
    }
    const totalRow = document.createElement("div");
    totalRow.className = "tally-total";
    totalRow.dataset.count = String(total);
    totalRow.textContent = `total reviews: ${total}`;
    panel.appendChild(totalRow);
    return panel;
  }
}
