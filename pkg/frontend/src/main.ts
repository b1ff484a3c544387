// DOM glue: wires the form, identity picker, and transcript container to
// the pure pieces in api.ts / session.ts / render.ts.

import { ApiError, AssistantClient } from "./api.js";
import { renderErrorBanner, renderTranscript } from "./render.js";
import { Session } from "./session.js";

const client = new AssistantClient("", (input, init) => fetch(input, init));
const session = new Session(window.localStorage);

const transcriptEl = document.getElementById("transcript") as HTMLElement;
const formEl = document.getElementById("ask") as HTMLFormElement;
const questionEl = document.getElementById("question") as HTMLInputElement;
const sendEl = document.getElementById("send") as HTMLButtonElement;
const identityEl = document.getElementById("identity") as HTMLInputElement;
const flashEl = document.getElementById("flash") as HTMLElement;

identityEl.value = session.currentUser();

function redraw(): void {
  transcriptEl.innerHTML = renderTranscript(session.events());
  transcriptEl.scrollTop = transcriptEl.scrollHeight;
}

identityEl.addEventListener("change", () => {
  session.switchIdentity(identityEl.value);
  redraw();
});

formEl.addEventListener("submit", async (ev) => {
  ev.preventDefault();
  const question = questionEl.value.trim();
  if (!question || !session.begin()) return;
  flashEl.innerHTML = "";
  questionEl.disabled = true;
  sendEl.disabled = true;
  try {
    const result = await client.query(question, session.currentUser());
    session.addTurn(question, result);
    questionEl.value = "";
    redraw();
  } catch (err) {
    const message = err instanceof ApiError ? err.message : `service unreachable: ${String(err)}`;
    flashEl.innerHTML = renderErrorBanner(message);
  } finally {
    session.end();
    questionEl.disabled = false;
    sendEl.disabled = false;
    questionEl.focus();
  }
});

redraw();
