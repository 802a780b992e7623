/**
 * DOM wiring for the annotator. One task on screen at a time: story fields
 * with provenance labels, the candidate text as a selectable area, a stage
 * palette (keyboard 1-5), Likert rows for the three criteria, a live
 * narrativity preview, and a background submission queue.
 */

import { AnnotatorClient } from "./api.js";
import { SubmissionQueue } from "./queue.js";
import { TaskSession } from "./state.js";
import {
  CRITERIA,
  STAGES,
  type Likert3,
  type StageCode,
  type TaskView,
} from "./types.js";

const LIKERT_LABELS: Record<Likert3, string> = {
  3: "Agree",
  2: "Neutral",
  1: "Disagree",
};

export class AnnotatorApp {
  private readonly root: HTMLElement;
  private readonly client: AnnotatorClient;
  private readonly queue = new SubmissionQueue();
  private readonly annotatorId: string;
  private tasks: TaskView[] = [];
  private session: TaskSession | null = null;
  private activeStage: StageCode = 1;

  constructor(root: HTMLElement, baseUrl: string, annotatorId: string) {
    this.root = root;
    this.client = new AnnotatorClient(baseUrl);
    this.annotatorId = annotatorId;
    document.addEventListener("keydown", (event) => {
      const stage = STAGES.find((s) => s.key === event.key);
      if (stage) {
        this.activeStage = stage.code;
        this.render();
      }
    });
  }

  async start(): Promise<void> {
    this.tasks = await this.client.fetchTasks(this.annotatorId);
    this.nextTask();
  }

  private nextTask(): void {
    const task = this.tasks.shift();
    this.session = task ? new TaskSession(task) : null;
    this.render();
  }

  private tagCurrentSelection(): void {
    if (!this.session) return;
    const selection = window.getSelection();
    if (!selection || selection.rangeCount === 0) return;
    const textarea = this.root.querySelector<HTMLElement>("[data-annotated-text]");
    if (!textarea) return;
    const range = selection.getRangeAt(0);
    if (!textarea.contains(range.commonAncestorContainer)) return;
    const full = this.session.task.annotated_text;
    const selected = selection.toString();
    if (!selected) return;
    const start = full.indexOf(selected);
    if (start < 0) return;
    this.session.tagSelection(this.activeStage, start, start + selected.length);
    selection.removeAllRanges();
    this.render();
  }

  private async submit(): Promise<void> {
    if (!this.session || !this.session.canSubmit()) return;
    this.queue.enqueue(this.session.buildPayload(this.annotatorId));
    this.nextTask();
    const summary = await this.queue.flush(this.client);
    if (this.queue.blockingError) {
      this.renderBlockingError(this.queue.blockingError);
    } else if (summary.pending > 0) {
      setTimeout(() => void this.queue.flush(this.client), 2000);
    }
  }

  private renderBlockingError(message: string): void {
    const banner = document.createElement("div");
    banner.className = "blocking-error";
    banner.textContent =
      `Submission rejected by the server (${message}). ` +
      "This indicates client/server scoring drift; stop and report it.";
    this.root.prepend(banner);
  }

  private render(): void {
    this.root.replaceChildren();
    if (!this.session) {
      const done = document.createElement("p");
      done.textContent = "No pending tasks.";
      this.root.appendChild(done);
      return;
    }
    const task = this.session.task;
    const story = document.createElement("dl");
    story.className = "story";
    const fields: Array<[string, string]> = [
      ["Premise", task.item.premise],
      ["Initial (replaced)", task.item.initial],
      ["Original ending", task.item.original_ending],
      ["Counterfactual", task.item.counterfactual],
      [`Candidate (${task.candidate_tag})`, task.candidate_text],
    ];
    for (const [label, value] of fields) {
      const dt = document.createElement("dt");
      dt.textContent = label;
      const dd = document.createElement("dd");
      dd.textContent = value;
      story.append(dt, dd);
    }
    this.root.appendChild(story);

    const palette = document.createElement("div");
    palette.className = "palette";
    for (const stage of STAGES) {
      const button = document.createElement("button");
      button.textContent = `${stage.key} ${stage.name}`;
      button.style.borderColor = stage.color;
      button.classList.toggle("active", stage.code === this.activeStage);
      button.addEventListener("click", () => {
        this.activeStage = stage.code;
        this.render();
      });
      palette.appendChild(button);
    }
    this.root.appendChild(palette);

    const text = document.createElement("p");
    text.dataset.annotatedText = "true";
    text.className = "annotated-text";
    text.textContent = task.annotated_text;
    text.addEventListener("mouseup", () => this.tagCurrentSelection());
    this.root.appendChild(text);

    const spanList = document.createElement("ul");
    spanList.className = "span-list";
    this.session.spans.forEach((span, index) => {
      const stage = STAGES.find((s) => s.code === span.stage);
      const li = document.createElement("li");
      li.style.background = stage ? stage.color : "#ccc";
      li.textContent =
        `${stage?.name ?? span.stage}: ` +
        `"${task.annotated_text.slice(span.start, span.end)}"`;
      const remove = document.createElement("button");
      remove.textContent = "x";
      remove.addEventListener("click", () => {
        this.session?.removeSpanAt(index);
        this.render();
      });
      li.appendChild(remove);
      spanList.appendChild(li);
    });
    this.root.appendChild(spanList);

    const preview = document.createElement("p");
    preview.className = "preview";
    preview.textContent = `Narrativity preview: ${this.session.narrativityPreview()}/5`;
    this.root.appendChild(preview);

    for (const criterion of CRITERIA) {
      const row = document.createElement("div");
      row.className = "likert-row";
      const label = document.createElement("span");
      label.textContent = criterion;
      row.appendChild(label);
      for (const value of [3, 2, 1] as Likert3[]) {
        const option = document.createElement("label");
        const radio = document.createElement("input");
        radio.type = "radio";
        radio.name = `likert-${criterion}`;
        radio.checked = this.session.ratingOf(criterion) === value;
        radio.addEventListener("change", () => {
          this.session?.rate(criterion, value);
          this.render();
        });
        option.append(radio, LIKERT_LABELS[value]);
        row.appendChild(option);
      }
      this.root.appendChild(row);
    }

    const submit = document.createElement("button");
    submit.className = "submit";
    submit.textContent = "Submit annotation";
    submit.disabled = !this.session.canSubmit();
    submit.addEventListener("click", () => void this.submit());
    this.root.appendChild(submit);

    const status = document.createElement("p");
    status.className = "queue-status";
    status.textContent = `Queue: ${this.queue.size} pending, ${this.tasks.length} tasks left`;
    this.root.appendChild(status);
  }
}

export function mount(): void {
  const root = document.getElementById("app");
  if (!root) return;
  const params = new URLSearchParams(window.location.search);
  const app = new AnnotatorApp(
    root,
    params.get("service") ?? "http://127.0.0.1:8420",
    params.get("annotator") ?? "anonymous",
  );
  void app.start();
}
