// Pure per-trial state: which slots are rated and played, and whether
// the record is complete enough to submit.

export interface SlotState {
  token: string;
  url: string;
  rating: number | null;
  playCount: number;
}

export function canSubmit(slots: SlotState[]): boolean {
  return slots.length > 0 &&
    slots.every((s) => s.rating !== null && s.playCount >= 1);
}

export function incompleteSlots(slots: SlotState[]): number[] {
  const out: number[] = [];
  slots.forEach((s, i) => {
    if (s.rating === null || s.playCount < 1) out.push(i);
  });
  return out;
}
