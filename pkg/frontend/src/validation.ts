import type { Verdict } from "./types.js";

export interface VerdictCheck {
  ok: boolean;
  message?: string;
}

/**
 * Client-side mirror of the server's review rules. Partial adoption needs a
 * non-empty edit that actually differs from the candidate text; the other
 * verdicts must not carry an edit.
 */
export function checkVerdict(
  verdict: Verdict,
  candidateText: string,
  editedText: string | undefined,
): VerdictCheck {
  if (verdict === "partially_adopted") {
    const edited = (editedText ?? "").trim();
    if (!edited) {
      return { ok: false, message: "Partial adoption needs an edited text." };
    }
    if (edited === candidateText.trim()) {
      return {
        ok: false,
        message: "Edit the text before partially adopting; it is unchanged.",
      };
    }
    return { ok: true };
  }
  return { ok: true };
}
