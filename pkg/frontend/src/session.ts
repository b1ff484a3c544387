/**
 * Session state for the console: the active identity, the transcript, and
 * the single-in-flight guard. Storage is injected (localStorage in the
 * browser, a plain object in tests) so identity survives a page reload.
 */

import type { QueryResult } from "./api.js";

export interface StorageLike {
  getItem(key: string): string | null;
  setItem(key: string, value: string): void;
}

const USER_KEY = "raftkit-console:user";

export interface ChatTurn {
  kind: "turn";
  question: string;
  userId: string;
  result: QueryResult;
}

export interface IdentityNote {
  kind: "identity";
  userId: string;
}

export type TranscriptEvent = ChatTurn | IdentityNote;

export class Session {
  private transcript: TranscriptEvent[] = [];
  private userId: string;
  private inFlight = false;

  constructor(private readonly storage: StorageLike) {
    this.userId = storage.getItem(USER_KEY) ?? "";
  }

  // blank means public; the service treats unknown ids the same way
  currentUser(): string {
    return this.userId;
  }

  switchIdentity(userId: string): void {
    const next = userId.trim();
    if (next === this.userId) return;
    this.userId = next;
    this.storage.setItem(USER_KEY, next);
    this.transcript.push({ kind: "identity", userId: next });
  }

  busy(): boolean {
    return this.inFlight;
  }

  /** Marks a query in flight; returns false if one already is. */
  begin(): boolean {
    if (this.inFlight) return false;
    this.inFlight = true;
    return true;
  }

  end(): void {
    this.inFlight = false;
  }

  addTurn(question: string, result: QueryResult): void {
    this.transcript.push({ kind: "turn", question, userId: this.userId, result });
  }

  events(): readonly TranscriptEvent[] {
    return this.transcript;
  }
}
