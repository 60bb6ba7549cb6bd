// Entry point: wires the app to the service named by query parameters
// (?experiment=<id>&service=<base-url>); defaults to same-origin.

import { ApiClient } from "./api.js";
import { htmlAudioPlayerFactory } from "./player.js";
import { ListeningTestApp } from "./ui.js";

function boot(): void {
  const params = new URLSearchParams(window.location.search);
  const experiment = params.get("experiment") ?? "default";
  const service = params.get("service") ?? "";
  const root = document.getElementById("app");
  if (!root) throw new Error("missing #app container");
  const app = new ListeningTestApp(
    root, new ApiClient(service), htmlAudioPlayerFactory, experiment);
  const start = document.createElement("button");
  start.className = "start";
  start.textContent = "Begin (enables audio)";
  // user gesture unlocks autoplay policies before any playback
  start.addEventListener("click", () => {
    start.remove();
    void app.start();
  });
  root.appendChild(start);
}

document.addEventListener("DOMContentLoaded", boot);
