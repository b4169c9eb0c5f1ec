import init, { smoothingCurve, graphDemo, regressionDemo } from "./pkg/colearn_demo.js";

const COLORS = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf"];
const $ = (id) => document.getElementById(id);
const num = (id) => Number($(id).value);

function frame(canvas, xs, ys, pad = 30) {
  const ctx = canvas.getContext("2d");
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  const [x0, x1] = xs, [y0, y1] = ys;
  const sx = (x) => pad + (x - x0) / (x1 - x0 || 1) * (canvas.width - 2 * pad);
  const sy = (y) => canvas.height - pad - (y - y0) / (y1 - y0 || 1) * (canvas.height - 2 * pad);
  ctx.strokeStyle = "#999";
  ctx.strokeRect(pad, pad, canvas.width - 2 * pad, canvas.height - 2 * pad);
  ctx.fillStyle = "#555";
  ctx.font = "10px sans-serif";
  ctx.fillText(y1.toPrecision(3), 2, pad + 4);
  ctx.fillText(y0.toPrecision(3), 2, canvas.height - pad);
  ctx.fillText(x0.toPrecision(3), pad, canvas.height - pad + 14);
  ctx.fillText(x1.toPrecision(3), canvas.width - pad - 20, canvas.height - pad + 14);
  return { ctx, sx, sy };
}

function line(ctx, xs, ys, sx, sy, color, width = 1.5, dash = []) {
  ctx.beginPath();
  ctx.setLineDash(dash);
  ctx.strokeStyle = color;
  ctx.lineWidth = width;
  xs.forEach((x, i) => (i ? ctx.lineTo(sx(x), sy(ys[i])) : ctx.moveTo(sx(x), sy(ys[i]))));
  ctx.stroke();
  ctx.setLineDash([]);
}

function extent(values) {
  let lo = Infinity, hi = -Infinity;
  for (const v of values) if (Number.isFinite(v)) { lo = Math.min(lo, v); hi = Math.max(hi, v); }
  return [lo, hi];
}

function heatmap(canvas, w, label) {
  const ctx = canvas.getContext("2d");
  const n = w.length, pad = 24, cell = (canvas.width - 2 * pad) / n;
  const max = Math.max(1e-12, ...w.flat());
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  for (let i = 0; i < n; i++) {
    for (let j = 0; j < n; j++) {
      const v = Math.round(255 * (1 - w[i][j] / max));
      ctx.fillStyle = `rgb(${v},${v},255)`;
      ctx.fillRect(pad + j * cell, pad + i * cell, cell, cell);
    }
  }
  ctx.strokeStyle = "#999";
  ctx.strokeRect(pad, pad, n * cell, n * cell);
  ctx.fillStyle = "#333";
  ctx.font = "12px sans-serif";
  ctx.fillText(`${label} (max ${max.toPrecision(3)})`, pad, 16);
}

function drawSmoothing() {
  const b = 10 ** num("s-b");
  $("s-b-label").textContent = `b = ${b.toExponential(1)}`;
  const c = JSON.parse(smoothingCurve(b));
  const { ctx, sx, sy } = frame($("s-curve"), [-2, 2], extent([...c.relu, ...c.smooth]));
  line(ctx, c.x, c.relu, sx, sy, "#999", 1, [4, 3]);
  line(ctx, c.x, c.smooth, sx, sy, COLORS[0], 2);
}

function drawGraph() {
  const v = JSON.parse(graphDemo(num("g-agents"), num("g-groups"), num("g-spread"), num("g-l2"), num("g-l3"), BigInt(num("g-seed"))));
  const xs = extent(v.points.map((p) => p[0])), ys = extent(v.points.map((p) => p[1]));
  const { ctx, sx, sy } = frame($("g-points"), [xs[0] - 0.5, xs[1] + 0.5], [ys[0] - 0.5, ys[1] + 0.5]);
  const max = Math.max(1e-12, ...v.weights.flat());
  for (let i = 0; i < v.points.length; i++) {
    for (let j = i + 1; j < v.points.length; j++) {
      if (v.weights[i][j] <= 0) continue;
      ctx.strokeStyle = `rgba(0,0,0,${0.15 + 0.85 * v.weights[i][j] / max})`;
      ctx.beginPath();
      ctx.moveTo(sx(v.points[i][0]), sy(v.points[i][1]));
      ctx.lineTo(sx(v.points[j][0]), sy(v.points[j][1]));
      ctx.stroke();
    }
  }
  v.points.forEach((p, i) => {
    ctx.fillStyle = COLORS[v.groups[i] % COLORS.length];
    ctx.beginPath();
    ctx.arc(sx(p[0]), sy(p[1]), 5, 0, 2 * Math.PI);
    ctx.fill();
  });
  heatmap($("g-heat"), v.weights, "inferred W");
  heatmap($("g-oracle"), v.oracle, "oracle W");
  $("g-stats").textContent =
    `GMSE vs oracle ${v.gmse.toFixed(4)}   Newton iterations ${v.newton_iterations}   messages ${v.messages}`;
}

let regression = null;

function drawRegression() {
  if (!regression) return;
  const t = Math.min(num("r-t"), regression.predictions.length);
  $("r-t-label").textContent = t;
  const v = regression, preds = v.predictions[t - 1];
  const ys = extent([...v.truth.flat(), ...preds.flat()]);
  const { ctx, sx, sy } = frame($("r-curves"), [v.grid[0], v.grid[v.grid.length - 1]], ys);
  v.truth.forEach((f, g) => line(ctx, v.grid, f, sx, sy, COLORS[g % COLORS.length], 3, [6, 4]));
  preds.forEach((p, i) => line(ctx, v.grid, p, sx, sy, COLORS[v.groups[i] % COLORS.length], 1.2));

  const ts = v.mse.map((_, k) => k + 1);
  const m = frame($("r-mse"), [1, ts.length], [0, Math.max(...v.mse)]);
  line(m.ctx, ts, v.mse, m.sx, m.sy, "#333", 2);
  m.ctx.fillStyle = "#d62728";
  m.ctx.beginPath();
  m.ctx.arc(m.sx(t), m.sy(v.mse[t - 1]), 4, 0, 2 * Math.PI);
  m.ctx.fill();

  const g = v.gmse[t - 1];
  $("r-stats").textContent =
    `t=${t}   system MSE ${v.mse[t - 1].toFixed(4)}   GMSE ${g == null ? "n/a" : g.toFixed(4)}\n` +
    `agent types ${v.agent_types.join(" ")}   groups ${v.groups.join(" ")}`;
}

function runRegression() {
  regression = JSON.parse(regressionDemo($("r-variant").value, BigInt(num("r-seed")), num("r-l1"), num("r-l2"), num("r-l3")));
  $("r-t").max = regression.predictions.length;
  drawRegression();
}

function guarded(fn) {
  return () => {
    try {
      fn();
      $("status").textContent = "";
      $("status").className = "";
    } catch (e) {
      $("status").textContent = String(e.message ?? e);
      $("status").className = "error";
    }
  };
}

await init();
$("s-b").addEventListener("input", guarded(drawSmoothing));
$("g-run").addEventListener("click", guarded(drawGraph));
$("r-run").addEventListener("click", guarded(runRegression));
$("r-t").addEventListener("input", guarded(drawRegression));
guarded(drawSmoothing)();
guarded(drawGraph)();
guarded(runRegression)();
