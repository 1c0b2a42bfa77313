export type Verdict = "adopted" | "partially_adopted" | "rejected";

export interface QueueItem {
  candidate_id: string;
  item_id: string;
  original_input: string;
  candidate_text: string;
  persona_brief: string | null;
  round: number;
}

export interface ReviewQueueView {
  items: QueueItem[];
  cursor: string | null;
}

export interface TallyCounts {
  adopted: number;
  partial: number;
  rejected: number;
}

export interface Tally {
  counts: TallyCounts;
  rates: { adopted: number; partial: number; rejected: number };
  total: number;
}

export interface RunStatus {
  run_id: string;
  status: "pending" | "running" | "completed" | "failed";
  variant: string;
  seed: number;
  candidate_count: number;
  error: string | null;
}
