// HTML-string renderers for each screen.
//
// Pure functions of UiSessionState so the DOM-scan tests can assert on
// output directly. The tutor utterance is always emitted as the single
// text child of its span, keeping selection offsets aligned with the raw
// string. In blind mode only the obfuscated label is ever rendered; the
// state machine never even holds the true method name.

import type { UiSessionState, UiTurn } from "./flow";

export function escapeHtml(text: string): string {
  return text
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}

function methodBadge(state: UiSessionState): string {
  const label = state.methodLabel ? `bot ${escapeHtml(state.methodLabel)}` : "bot";
  return `<span class="badge">${label} · ${escapeHtml(state.level)}</span>`;
}

export function renderTopicScreen(state: UiSessionState): string {
  const options = state.offeredTopics
    .map(
      (topic, i) =>
        `<button class="topic" data-topic-index="${i}">${escapeHtml(topic)}</button>`,
    )
    .join("\n");
  return `
<section class="screen topic-screen">
  ${methodBadge(state)}
  <h2>Choose a topic you feel comfortable with</h2>
  ${options}
</section>`;
}

function renderTurn(turn: UiTurn): string {
  return `
  <div class="exchange" data-turn="${turn.index}">
    <div class="bubble student">${escapeHtml(turn.student)}</div>
    <div class="bubble tutor"><span class="tutor-text" data-turn="${turn.index}">${escapeHtml(turn.tutor)}</span></div>
  </div>`;
}

export function renderChatScreen(state: UiSessionState): string {
  const history = state.turns.map(renderTurn).join("\n");
  const locked = state.phase !== "chatting";
  return `
<section class="screen chat-screen">
  ${methodBadge(state)}
  <div class="transcript">${history}</div>
  <form class="composer">
    <input type="text" id="student-input" ${locked ? "disabled" : ""} placeholder="Type in Japanese…">
    <button type="submit" id="send" ${locked ? "disabled" : ""}>Send</button>
  </form>
  <p class="turn-count">${state.turns.length} / ${state.turnLimit} turns</p>
</section>`;
}

export function renderAnnotationScreen(state: UiSessionState, turn: UiTurn): string {
  return `
<section class="screen annotation-screen">
  ${methodBadge(state)}
  <h2>Highlight anything you did not understand</h2>
  <p class="hint">Select words or phrases in the reply, then press "add highlight".
     Submit with no highlights if you understood every word.</p>
  <div class="bubble tutor annotatable"><span class="tutor-text" data-turn="${turn.index}">${escapeHtml(turn.tutor)}</span></div>
  <ul id="pending-highlights"></ul>
  <button id="add-highlight">add highlight</button>
  <label><input type="checkbox" id="understood-overall" checked> I understood the overall meaning</label>
  <button id="submit-annotation">submit annotation</button>
</section>`;
}

const SURVEY_QUESTIONS: [string, string][] = [
  ["understand", "How much of the bot could you understand?"],
  ["effort", "How effortful was it to talk to the bot?"],
  ["comfort", "How comfortable did you feel talking to the bot?"],
  ["natural", "Did you feel like the bot's responses were natural given the context of the conversation?"],
  ["again", "Would you want to chat with this version of the bot again in the future?"],
];

export function renderSurveyScreen(state: UiSessionState): string {
  const rows = SURVEY_QUESTIONS.map(
    ([key, question]) => `
    <label class="likert" data-question="${key}">
      ${escapeHtml(question)}
      <input type="number" min="1" max="10" name="${key}" required>
    </label>`,
  ).join("\n");
  return `
<section class="screen survey-screen">
  ${methodBadge(state)}
  <h2>A few questions about this conversation (1–10)</h2>
  <form id="survey-form">
    ${rows}
    <button type="submit" id="submit-survey">Submit</button>
  </form>
</section>`;
}

export function renderDoneScreen(state: UiSessionState): string {
  return `
<section class="screen done-screen">
  ${methodBadge(state)}
  <h2>ありがとうございました！</h2>
  <p>This conversation is complete.</p>
</section>`;
}

export function renderErrorBanner(state: UiSessionState): string {
  if (!state.error) return "";
  const retry = state.errorRetriable ? `<button id="retry">retry</button>` : "";
  return `<div class="banner error">${escapeHtml(state.error)} ${retry}</div>`;
}

export function render(state: UiSessionState): string {
  const banner = renderErrorBanner(state);
  switch (state.phase) {
    case "selecting_topic":
      return banner + renderTopicScreen(state);
    case "chatting":
    case "awaiting_reply":
      return banner + renderChatScreen(state);
    case "annotating": {
      const turn = state.turns[state.turns.length - 1];
      return banner + renderAnnotationScreen(state, turn);
    }
    case "survey":
      return banner + renderSurveyScreen(state);
    case "done":
      return banner + renderDoneScreen(state);
    default:
      return banner + `<section class="screen"><p>loading…</p></section>`;
  }
}
