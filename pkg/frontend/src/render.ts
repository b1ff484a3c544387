/**
 * HTML builders for the console. Every function returns a string; the DOM
 * glue in main.ts only assigns innerHTML. Keeping these pure lets the test
 * suite assert on rendered markup without a browser.
 */

import type { ProvenanceCard, QueryResult } from "./api.js";
import type { TranscriptEvent } from "./session.js";

export function escapeHtml(raw: string): string {
  return raw
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;")
    .replace(/'/g, "&#39;");
}

export function renderCard(card: ProvenanceCard): string {
  const badges = card.access_groups
    .map((g) => `<span class="badge restricted">${escapeHtml(g)}</span>`)
    .join("");
  return (
    `<div class="card" data-chunk-id="${escapeHtml(card.chunk_id)}" data-doc-id="${escapeHtml(card.doc_id)}">` +
    `<a class="chunk-ref" href="#chunk-${escapeHtml(card.chunk_id)}">${escapeHtml(card.chunk_id)}</a>` +
    `<span class="doc">${escapeHtml(card.doc_id)}</span>` +
    `<span class="category">${escapeHtml(card.category)}</span>` +
    badges +
    `<span class="score">${card.fused_score.toFixed(5)}</span>` +
    `</div>`
  );
}

export function renderDegradedBanner(): string {
  return `<div class="banner degraded">lexical-only results: embedding route unavailable</div>`;
}

export function renderErrorBanner(message: string): string {
  return `<div class="banner error">${escapeHtml(message)}</div>`;
}

export function renderTurn(question: string, userId: string, result: QueryResult): string {
  const who = userId === "" ? "public" : userId;
  const cards = result.provenance.map(renderCard).join("");
  const banner = result.degraded ? renderDegradedBanner() : "";
  return (
    `<section class="turn">` +
    `<div class="question"><span class="who">${escapeHtml(who)}</span>${escapeHtml(question)}</div>` +
    banner +
    `<div class="answer">${escapeHtml(result.answer)}</div>` +
    `<div class="provenance">${cards}</div>` +
    `</section>`
  );
}

export function renderIdentityNote(userId: string): string {
  const who = userId === "" ? "public" : userId;
  return `<div class="identity-note">identity changed to ${escapeHtml(who)}</div>`;
}

export function renderTranscript(events: readonly TranscriptEvent[]): string {
  return events
    .map((ev) =>
      ev.kind === "identity" ? renderIdentityNote(ev.userId) : renderTurn(ev.question, ev.userId, ev.result),
    )
    .join("");
}
