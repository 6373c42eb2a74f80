import init, { basis_curves, simulate, optimize } from "./pkg/weakctl_wasm.js";

const $ = (id) => document.getElementById(id);
const COLORS = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#7f7f7f", "#17becf"];

function params() {
  const n = (id) => parseFloat($(id).value);
  return {
    train_center: [n("a1"), n("a2")],
    validation_center: [n("b1"), n("b2")],
    theta0: [n("t1"), n("t2")],
    horizon: n("horizon"),
    epsilon: n("epsilon"),
    u_max: n("umax"),
    basis: $("basis").value,
    n_basis: parseInt($("nbasis").value, 10),
    max_iters: parseInt($("iters").value, 10),
  };
}

function bounds(series) {
  let xs = series.flatMap((s) => s.x), ys = series.flatMap((s) => s.y);
  let [x0, x1, y0, y1] = [Math.min(...xs), Math.max(...xs), Math.min(...ys), Math.max(...ys)];
  if (x1 - x0 < 1e-12) { x0 -= 1; x1 += 1; }
  if (y1 - y0 < 1e-12) { y0 -= 1; y1 += 1; }
  const px = 0.05 * (x1 - x0), py = 0.05 * (y1 - y0);
  return [x0 - px, x1 + px, y0 - py, y1 + py];
}

// series: [{x, y, color, dots?}]
function plot(canvas, title, series, square = false) {
  const ctx = canvas.getContext("2d");
  const w = canvas.width, h = canvas.height, m = 28;
  ctx.clearRect(0, 0, w, h);
  let [x0, x1, y0, y1] = bounds(series);
  if (square) {
    const span = Math.max(x1 - x0, y1 - y0), cx = (x0 + x1) / 2, cy = (y0 + y1) / 2;
    [x0, x1, y0, y1] = [cx - span / 2, cx + span / 2, cy - span / 2, cy + span / 2];
  }
  const sx = (x) => m + (x - x0) / (x1 - x0) * (w - 2 * m);
  const sy = (y) => h - m - (y - y0) / (y1 - y0) * (h - 2 * m);
  ctx.strokeStyle = "#999";
  ctx.strokeRect(m, m, w - 2 * m, h - 2 * m);
  ctx.fillStyle = "#333";
  ctx.font = "12px sans-serif";
  ctx.fillText(title, m, m - 8);
  ctx.fillText(y1.toPrecision(3), 2, m + 10);
  ctx.fillText(y0.toPrecision(3), 2, h - m);
  ctx.fillText(x0.toPrecision(3), m, h - 8);
  ctx.fillText(x1.toPrecision(3), w - m - 30, h - 8);
  for (const s of series) {
    ctx.strokeStyle = ctx.fillStyle = s.color;
    if (s.dots) {
      s.x.forEach((x, i) => { ctx.beginPath(); ctx.arc(sx(x), sy(s.y[i]), 4, 0, 2 * Math.PI); ctx.fill(); });
      continue;
    }
    ctx.beginPath();
    s.x.forEach((x, i) => (i ? ctx.lineTo(sx(x), sy(s.y[i])) : ctx.moveTo(sx(x), sy(s.y[i]))));
    ctx.stroke();
  }
}

function drawBasis() {
  const p = params();
  const c = JSON.parse(basis_curves(p.basis, p.n_basis, p.horizon, 200));
  plot($("basisplot"), "basis functions", c.psi.map((row, j) => ({ x: c.t, y: row, color: COLORS[j % COLORS.length] })));
}

function phaseSeries(flow, color) {
  return { x: flow.theta.map((v) => v[0]), y: flow.theta.map((v) => v[1]), color };
}

function markers(p) {
  return [
    { x: [p.train_center[0]], y: [p.train_center[1]], color: "#2ca02c", dots: true },
    { x: [p.validation_center[0]], y: [p.validation_center[1]], color: "#d62728", dots: true },
  ];
}

function run() {
  const p = params();
  $("status").textContent = "running...";
  try {
    const r = JSON.parse(optimize(JSON.stringify(p)));
    plot($("phase"), "theta: controlled (blue) vs uncontrolled (grey)",
      [phaseSeries(r.baseline, "#999"), phaseSeries(r.controlled, "#1f77b4"), ...markers(p)], true);
    const t = r.controlled.t;
    plot($("control"), "u(t)", [0, 1].map((i) => ({ x: t, y: r.controlled.control.map((u) => u[i]), color: COLORS[i] })));
    plot($("cost"), "validation loss per iteration", [{ x: r.costs.map((_, k) => k), y: r.costs, color: "#333" }]);
    $("status").textContent =
      `J(0) = ${r.baseline.cost.toExponential(4)}, J(u*) = ${r.controlled.cost.toExponential(4)}, ${r.costs.length - 1} iterations, ${r.stop_reason}`;
  } catch (e) {
    $("status").textContent = "error: " + e;
  }
  drawBasis();
}

function plain() {
  const p = params();
  try {
    const f = JSON.parse(simulate(JSON.stringify(p)));
    plot($("phase"), "theta: uncontrolled", [phaseSeries(f, "#999"), ...markers(p)], true);
    $("status").textContent = `J(0) = ${f.cost.toExponential(4)}`;
  } catch (e) {
    $("status").textContent = "error: " + e;
  }
  drawBasis();
}

await init();
$("run").addEventListener("click", run);
$("plain").addEventListener("click", plain);
for (const id of ["basis", "nbasis", "horizon"]) $(id).addEventListener("change", drawBasis);
plain();
