import init, { explorePolicy, betaSweep, simulateAndCluster } from "./pkg/hetero_rlhf_demo.js";

const $ = (id) => document.getElementById(id);
const COLORS = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];
const pct = (x) => (x == null ? "NA" : (100 * x).toFixed(1) + "%");

function call(fn, req) {
  const out = JSON.parse(fn(JSON.stringify(req)));
  if (out.error) throw new Error(out.error);
  return out;
}

function numbers(text) {
  return text.split(",").map((s) => s.trim()).filter((s) => s.length).map(Number);
}

function table(headers, rows) {
  const head = "<tr>" + headers.map((h) => `<th>${h}</th>`).join("") + "</tr>";
  const body = rows.map((r) => "<tr>" + r.map((c) => `<td>${c}</td>`).join("") + "</tr>").join("");
  return `<table>${head}${body}</table>`;
}

function updatePolicy() {
  const beta = Math.pow(10, Number($("p-beta").value));
  $("p-beta-val").textContent = beta.toPrecision(3);
  const rewards = numbers($("p-rewards").value);
  const sftText = $("p-sft").value.trim();
  const sft = sftText ? numbers(sftText) : null;
  try {
    const v = call(explorePolicy, { rewards, sft, beta });
    const rows = rewards.map((r, i) => [
      `y${i + 1}`, r, v.closed_form[i].toFixed(4), v.numeric[i].toFixed(4), v.with_log_term[i].toFixed(4),
    ]);
    $("p-out").innerHTML =
      table(["action", "reward", "closed form", "solver", "with log term"], rows) +
      `<p>total variation between closed form and solver: ${v.total_variation.toExponential(2)}
       (${v.numeric_iterations} iterations)</p>`;
    const betas = Array.from({ length: 121 }, (_, i) => Math.pow(10, -2 + (3.5 * i) / 120));
    drawSweep(betas, call(betaSweep, { rewards, sft, betas }));
  } catch (e) {
    $("p-out").innerHTML = `<p class="error">${e.message}</p>`;
  }
}

function drawSweep(betas, rows) {
  const cv = $("p-sweep"), ctx = cv.getContext("2d");
  const pad = 30, w = cv.width - 2 * pad, h = cv.height - 2 * pad;
  ctx.clearRect(0, 0, cv.width, cv.height);
  ctx.strokeStyle = "#999";
  ctx.strokeRect(pad, pad, w, h);
  ctx.fillStyle = "#555";
  ctx.fillText("β = 0.01", pad, cv.height - 8);
  ctx.fillText("β ≈ 3000", pad + w - 50, cv.height - 8);
  ctx.fillText("probability", 2, pad - 8);
  const n = rows[0].length;
  for (let a = 0; a < n; a++) {
    ctx.strokeStyle = COLORS[a % COLORS.length];
    ctx.beginPath();
    rows.forEach((p, i) => {
      const x = pad + (w * i) / (rows.length - 1), y = pad + h * (1 - p[a]);
      i ? ctx.lineTo(x, y) : ctx.moveTo(x, y);
    });
    ctx.stroke();
  }
}

function runClusters() {
  const req = {
    n_workers: Number($("c-n").value),
    groups: Number($("c-groups").value),
    k: Number($("c-k").value),
    separation: (Number($("c-sep").value) * Math.PI) / 180,
    noise: Number($("c-noise").value),
    pairs_per_worker: Number($("c-pairs").value),
    epochs: Number($("c-epochs").value),
    seed: Number($("c-seed").value),
  };
  $("c-out").textContent = "running…";
  setTimeout(() => {
    try {
      const v = call(simulateAndCluster, req);
      const rates = v.win_rates.map((r) => [r.model_label, r.n_pairs, pct(r.win_rate)]);
      const bayes = v.bayes.map((r, g) => [`latent group ${g + 1}`, r.n_pairs, pct(r.win_rate)]);
      $("c-out").innerHTML =
        `<p>ARI vs latent groups: k-means ${v.kmeans_ari.toFixed(3)}, alternation ${v.algorithm1_ari.toFixed(3)}
         (${v.rounds} rounds)</p>` +
        table(["model", "test pairs", "win-rate"], rates) +
        table(["true reward", "test pairs", "win-rate"], bayes);
      drawScatter(v.points);
      drawHeat(v.similarity);
    } catch (e) {
      $("c-out").innerHTML = `<p class="error">${e.message}</p>`;
    }
  }, 10);
}

function drawScatter(points) {
  const cv = $("c-scatter"), ctx = cv.getContext("2d");
  ctx.clearRect(0, 0, cv.width, cv.height);
  const xs = points.map((p) => p.x), ys = points.map((p) => p.y);
  const span = (v) => [Math.min(...v), Math.max(...v) - Math.min(...v) || 1];
  const [x0, xw] = span(xs), [y0, yw] = span(ys), pad = 20, size = cv.width - 2 * pad;
  for (const p of points) {
    const x = pad + (size * (p.x - x0)) / xw, y = pad + size * (1 - (p.y - y0) / yw);
    ctx.fillStyle = COLORS[p.cluster % COLORS.length];
    ctx.beginPath();
    if (p.group % 2 === 0) ctx.arc(x, y, 5, 0, 2 * Math.PI);
    else ctx.rect(x - 5, y - 5, 10, 10);
    ctx.fill();
  }
}

function drawHeat(m) {
  const cv = $("c-heat"), ctx = cv.getContext("2d"), n = m.length, cell = cv.width / n;
  for (let i = 0; i < n; i++) {
    for (let j = 0; j < n; j++) {
      const s = m[i][j];
      const r = s > 0 ? 255 : Math.round(255 * (1 + s)), b = s < 0 ? 255 : Math.round(255 * (1 - s));
      ctx.fillStyle = `rgb(${r}, ${Math.round(255 * (1 - Math.abs(s)))}, ${b})`;
      ctx.fillRect(j * cell, i * cell, Math.ceil(cell), Math.ceil(cell));
    }
  }
}

await init();
for (const id of ["p-rewards", "p-sft", "p-beta"]) $(id).addEventListener("input", updatePolicy);
$("c-run").addEventListener("click", runClusters);
updatePolicy();
runClusters();
