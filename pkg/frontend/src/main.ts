import { AnnotationApi } from "./api.js";
import { OfflineQueue } from "./offlineQueue.js";
import { mount } from "./render.js";
import { GradingSession } from "./session.js";

/**
 * Entry point. Service URL and grader id come from query parameters:
 *   index.html?api=http://localhost:8000&grader=ezb
 */

function bootstrap(): void {
  const params = new URLSearchParams(window.location.search);
  const baseUrl = params.get("api") ?? "";
  const graderId = params.get("grader") ?? "";
  const root = document.getElementById("app");
  if (!root) throw new Error("missing #app element");
  if (!graderId) {
    root.textContent = "add ?grader=<your id> to the URL to start grading";
    return;
  }

  const api = new AnnotationApi({ baseUrl, graderId });
  const queue = new OfflineQueue(window.localStorage);
  const session = new GradingSession(api, queue);
  mount(root, session);

  window.addEventListener("online", () => void session.sync());
  void session.sync().then(() => session.start());
}

bootstrap();
