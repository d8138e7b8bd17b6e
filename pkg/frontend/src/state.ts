/** Client-side session view model.
 *
 * Locking is purely a client concept: the server only ever sees the index
 * set passed to resample. Locks survive server round trips by index.
 */

import type { SessionResponse } from "./api.js";

export interface TemplateView {
  index: number;
  provenance: string;
  thumbnail: string;
  locked: boolean;
  usage: number | null;
}

export interface SessionView {
  id: string;
  checkpoint: string;
  corpus: string;
  k: number;
  seedLineage: Record<string, unknown>[];
  templates: TemplateView[];
  contentSize: { height: number; width: number } | null;
  usage: number[] | null;
  artifacts: string[];
}

export function fromResponse(
  resp: SessionResponse,
  previous?: SessionView,
): SessionView {
  const templates = resp.templates.map((t) => ({
    index: t.index,
    provenance: t.provenance,
    thumbnail: t.thumbnail,
    locked: previous?.templates[t.index]?.locked ?? false,
    usage: resp.usage ? resp.usage[t.index] : null,
  }));
  return {
    id: resp.id,
    checkpoint: resp.checkpoint,
    corpus: resp.corpus,
    k: resp.k,
    seedLineage: resp.seed_lineage,
    templates,
    contentSize: resp.content,
    usage: resp.usage,
    artifacts: resp.artifacts,
  };
}

export function toggleLock(view: SessionView, index: number): SessionView {
  return {
    ...view,
    templates: view.templates.map((t) =>
      t.index === index ? { ...t, locked: !t.locked } : t,
    ),
  };
}

export function unlockedIndices(view: SessionView): number[] {
  return view.templates.filter((t) => !t.locked).map((t) => t.index);
}

/** Usage bars are normalized to the server-reported fractions. */
export function usagePercent(view: SessionView, index: number): number {
  const u = view.templates[index]?.usage;
  return u == null ? 0 : Math.round(u * 100);
}
