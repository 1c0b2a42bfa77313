import { ReviewApi } from "./api.js";
import { ReviewConsole } from "./app.js";

const params = new URLSearchParams(window.location.search);
const runId = params.get("run") ?? "";
const reviewerId = params.get("reviewer") ?? "anonymous";
const base = params.get("service") ?? "";

const root = document.getElementById("app");
if (!root) throw new Error("missing #app element");
if (!runId) {
  root.textContent = "Pass ?run=<run_id>&reviewer=<name> in the URL.";
} else {
  const console_ = new ReviewConsole(root, new ReviewApi(base), runId, reviewerId);
  void console_.start();
}
