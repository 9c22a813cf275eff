import init, { theory_curve, critical_curve, scan_demo } from "../pkg/biasprop_wasm.js";

const $ = (id) => document.getElementById(id);
const num = (id) => Number($(id).value);

function plot(canvas, xs, series, hline) {
  const ctx = canvas.getContext("2d");
  const w = canvas.width, h = canvas.height, pad = 40;
  ctx.clearRect(0, 0, w, h);
  const ys = series.flatMap((s) => s.ys).concat(hline === undefined ? [] : [hline]);
  const x0 = Math.min(...xs), x1 = Math.max(...xs);
  const y1 = Math.max(...ys, 1e-9);
  const sx = (x) => pad + ((x - x0) / (x1 - x0 || 1)) * (w - 2 * pad);
  const sy = (y) => h - pad - (y / y1) * (h - 2 * pad);
  ctx.strokeStyle = "#888";
  ctx.beginPath();
  ctx.moveTo(pad, pad); ctx.lineTo(pad, h - pad); ctx.lineTo(w - pad, h - pad);
  ctx.stroke();
  ctx.fillStyle = "#444";
  ctx.fillText(x0.toFixed(1), pad, h - pad + 14);
  ctx.fillText(x1.toFixed(1), w - pad - 20, h - pad + 14);
  ctx.fillText(y1.toFixed(1), 2, pad);
  for (const s of series) {
    ctx.strokeStyle = s.color;
    ctx.beginPath();
    s.ys.forEach((y, i) => (i ? ctx.lineTo(sx(xs[i]), sy(y)) : ctx.moveTo(sx(xs[i]), sy(y))));
    ctx.stroke();
  }
  if (hline !== undefined) {
    ctx.strokeStyle = "#c33";
    ctx.setLineDash([5, 4]);
    ctx.beginPath();
    ctx.moveTo(pad, sy(hline)); ctx.lineTo(w - pad, sy(hline));
    ctx.stroke();
    ctx.setLineDash([]);
  }
}

function runTheory() {
  const r = JSON.parse(theory_curve(num("tc-n"), 7, $("tc-target").value, num("tc-alpha"), num("tc-dmax"), 60));
  if (r.error) { $("tc-out").textContent = r.error; return; }
  plot($("tc-canvas"), r.deltas, [{ ys: r.f_theo, color: "#2a6" }], r.h_alpha);
  $("tc-out").textContent =
    `M = ${r.m}, h(alpha) = ${r.h_alpha.toFixed(3)}, delta_thresh = ${r.delta_thresh.toFixed(4)}, |D_S| = ${r.n_target}`;
}

function runCritical() {
  const r = JSON.parse(critical_curve(num("cv-m"), num("cv-alpha")));
  if (r.error) { alert(r.error); return; }
  plot($("cv-canvas"), r.m, [{ ys: r.h_alpha, color: "#36c" }]);
}

function runScan() {
  $("sd-out").textContent = "running...";
  setTimeout(() => {
    const r = JSON.parse(scan_demo(num("sd-n"), num("sd-seed"), $("sd-target").value, num("sd-delta"),
      num("sd-iter"), 0.05, $("sd-logit").checked));
    $("sd-out").textContent = r.error ? r.error : JSON.stringify(r, null, 2);
  }, 0);
}

await init();
$("tc-run").onclick = runTheory;
$("cv-run").onclick = runCritical;
$("sd-run").onclick = runScan;
runTheory();
runCritical();
