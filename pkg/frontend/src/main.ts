// Browser bootstrap: binds the state machine to the DOM.

import { StudyApi, type CharRange, type SurveyAnswers } from "./api";
import { SessionFlow } from "./flow";
import { render } from "./render";
import { selectionToRange } from "./spans";

const root = document.getElementById("app")!;
const api = new StudyApi(window.location.origin);

let flow: SessionFlow | null = null;
let pendingRanges: CharRange[] = [];

function repaint(): void {
  if (!flow) return;
  root.innerHTML = render(flow.state);
  bind();
}

function bind(): void {
  if (!flow) return;
  const state = flow.state;

  root.querySelectorAll<HTMLButtonElement>("button.topic").forEach((button) => {
    button.addEventListener("click", () => {
      const index = Number(button.dataset.topicIndex);
      flow!.chooseTopic(state.offeredTopics[index]);
      repaint();
    });
  });

  const composer = root.querySelector<HTMLFormElement>("form.composer");
  if (composer) {
    composer.addEventListener("submit", async (event) => {
      event.preventDefault();
      const input = root.querySelector<HTMLInputElement>("#student-input")!;
      const text = input.value.trim();
      if (!text || flow!.inputLocked) return;
      repaint(); // lock the input while the request is in flight
      try {
        await flow!.submitTurn(text);
      } catch {
        // state machine already recorded the failure
      }
      pendingRanges = [];
      repaint();
    });
  }

  const addHighlight = root.querySelector<HTMLButtonElement>("#add-highlight");
  if (addHighlight) {
    addHighlight.addEventListener("click", () => {
      const selection = window.getSelection();
      const container = root.querySelector(".annotatable .tutor-text");
      if (!selection || !container) return;
      for (let i = 0; i < selection.rangeCount; i++) {
        const range = selectionToRange(container, selection.getRangeAt(i));
        if (range) pendingRanges.push(range);
      }
      selection.removeAllRanges();
      const list = root.querySelector("#pending-highlights")!;
      list.innerHTML = pendingRanges
        .map((r) => `<li>[${r.start}, ${r.end})</li>`)
        .join("");
    });
  }

  const submitAnnotation = root.querySelector<HTMLButtonElement>("#submit-annotation");
  if (submitAnnotation) {
    submitAnnotation.addEventListener("click", async () => {
      const understood =
        root.querySelector<HTMLInputElement>("#understood-overall")?.checked ?? true;
      try {
        await flow!.submitHighlights(pendingRanges, understood);
      } catch {
        // validation errors keep the annotation screen open
      }
      pendingRanges = [];
      repaint();
    });
  }

  const surveyForm = root.querySelector<HTMLFormElement>("#survey-form");
  if (surveyForm) {
    surveyForm.addEventListener("submit", async (event) => {
      event.preventDefault();
      const data = new FormData(surveyForm);
      const answers = Object.fromEntries(
        ["understand", "effort", "comfort", "natural", "again"].map((key) => [
          key,
          Number(data.get(key)),
        ]),
      ) as unknown as SurveyAnswers;
      try {
        await flow!.submitSurvey(answers);
      } catch {
        return; // client-side block keeps the form up
      }
      repaint();
    });
  }

  const retry = root.querySelector<HTMLButtonElement>("#retry");
  if (retry) {
    retry.addEventListener("click", () => {
      flow!.retry();
      repaint();
    });
  }
}

const startForm = document.getElementById("start-form") as HTMLFormElement;
startForm.addEventListener("submit", async (event) => {
  event.preventDefault();
  const level = (document.getElementById("level") as HTMLSelectElement).value;
  const blind = (document.getElementById("blind") as HTMLInputElement).checked;
  const participant = (document.getElementById("participant") as HTMLInputElement).value;
  flow = new SessionFlow(api, {
    level,
    blind,
    participantId: participant || "anonymous",
  });
  startForm.hidden = true;
  try {
    await flow.start();
  } catch {
    startForm.hidden = false; // no session persisted locally; allow retry
  }
  repaint();
});
