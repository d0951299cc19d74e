import init, { compare_strategies, ablation, scatter } from "./pkg/tta_web.js";

const $ = (id) => document.getElementById(id);
const status = (msg, err = false) => { $("status").textContent = msg; $("status").className = err ? "err" : ""; };

function params() {
  const p = {};
  for (const id of ["seed", "n_target", "n_f", "k_s"]) p[id] = parseInt($(id).value, 10);
  for (const id of ["shift", "novel_weight", "alpha"]) if ($(id).value !== "") p[id] = parseFloat($(id).value);
  return JSON.stringify(p);
}

function table(rows) {
  const head = "<tr><th></th><th>AUC</th><th>ACC</th><th>EER</th></tr>";
  const body = rows.map((r) => `<tr><td>${r.name}</td><td>${r.auc.toFixed(4)}</td><td>${r.acc.toFixed(4)}</td><td>${r.eer.toFixed(4)}</td></tr>`);
  $("table").innerHTML = `<table>${head}${body.join("")}</table>`;
}

function color(score) {
  const r = Math.round(255 * score), b = Math.round(255 * (1 - score));
  return `rgb(${r},60,${b})`;
}

function plot(canvas, points, key, title) {
  const ctx = canvas.getContext("2d");
  const { width: w, height: h } = canvas;
  ctx.clearRect(0, 0, w, h);
  const xs = points.map((p) => p.x), ys = points.map((p) => p.y);
  const [x0, x1] = [Math.min(...xs), Math.max(...xs)], [y0, y1] = [Math.min(...ys), Math.max(...ys)];
  const sx = (x) => 10 + ((x - x0) / (x1 - x0 || 1)) * (w - 20);
  const sy = (y) => h - 10 - ((y - y0) / (y1 - y0 || 1)) * (h - 40);
  for (const p of points) {
    ctx.fillStyle = color(p[key]);
    if (p.label === 1) ctx.fillRect(sx(p.x) - 2, sy(p.y) - 2, 4, 4);
    else { ctx.beginPath(); ctx.arc(sx(p.x), sy(p.y), 2, 0, 2 * Math.PI); ctx.fill(); }
  }
  ctx.fillStyle = "#222";
  ctx.fillText(title, 10, 14);
}

async function guarded(label, fn) {
  status(`${label}...`);
  await new Promise((r) => setTimeout(r, 0)); // let the status paint
  try { fn(); status(""); } catch (e) { status(String(e), true); }
}

await init();
$("shift").placeholder = "default";
$("novel_weight").placeholder = "default";
$("compare").onclick = () => guarded("running four strategies", () => table(JSON.parse(compare_strategies(params()))));
$("ablate").onclick = () => guarded("running ablation", () => table(JSON.parse(ablation(params()))));
$("scatter").onclick = () => guarded("scoring", () => {
  const pts = JSON.parse(scatter(params()));
  $("plots").hidden = false;
  plot($("base"), pts, "base", "base detector");
  plot($("adapted"), pts, "adapted", "adapted (ours)");
});
