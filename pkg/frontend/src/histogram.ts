/** Score-distribution bars, drawn exactly from the served bins.
 *
 * Bar heights scale the served counts into pixels (layout only); the bin
 * edges and counts are never recomputed client-side. Selected-chunk counts
 * overlay the totals per bin.
 */

import type { HistogramView } from "./types.js";

export function renderHistogram(view: HistogramView): HTMLElement {
  const root = document.createElement("div");
  root.className = "histogram";
  const max = Math.max(1, ...view.counts_all);
  view.counts_all.forEach((count, i) => {
    const selected = view.counts_selected[i] ?? 0;
    const bin = document.createElement("div");
    bin.className = "histogram-bin";
    bin.dataset.countAll = String(count);
    bin.dataset.countSelected = String(selected);
    const lo = view.bin_edges[i];
    const hi = view.bin_edges[i + 1];
    bin.title = `[${lo ?? "?"}, ${hi ?? "?"}] all ${count}, selected ${selected}`;

    const all = document.createElement("div");
    all.className = "histogram-bar-all";
    all.style.height = `${Math.round((count / max) * 100)}%`;
    const overlay = document.createElement("div");
    overlay.className = "histogram-bar-selected";
    overlay.style.height = `${Math.round((selected / max) * 100)}%`;
    if (selected > 0) {
      bin.classList.add("has-selected");
    }
    bin.append(all, overlay);
    root.append(bin);
  });
  return root;
}
