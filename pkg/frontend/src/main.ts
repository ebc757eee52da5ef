import { Viewer } from "./viewer.js";

const params = new URLSearchParams(window.location.search);
const storeUrl = params.get("store") ?? "http://127.0.0.1:8080";
const budgetBytes = Number(params.get("budget") ?? 2 * 1024 ** 3);
const preloadLevels = Number(params.get("preload") ?? 1);

const canvas = document.getElementById("view") as HTMLCanvasElement;
const overlay = document.getElementById("stats") as HTMLElement;
canvas.width = window.innerWidth;
canvas.height = window.innerHeight;
window.addEventListener("resize", () => {
  canvas.width = window.innerWidth;
  canvas.height = window.innerHeight;
});

const viewer = new Viewer(canvas, overlay, { storeUrl, budgetBytes, preloadLevels });
viewer.init().catch((err) => {
  overlay.textContent = `error: ${err.message ?? err}`;
  overlay.classList.add("error");
});
