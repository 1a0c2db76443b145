import init, { Lab } from "./pkg/tdae_wasm.js";

const $ = (id) => document.getElementById(id);
const num = (id) => Number($(id).value);
const canvas = $("plot");
const ctx = canvas.getContext("2d");
let lab = null;

function status(msg) { $("status").textContent = msg; }

// yield once so the status text paints before a blocking call
const later = (f) => new Promise((r) => setTimeout(() => r(f()), 20));

function run(label, f) {
  status(label + "...");
  later(() => {
    try {
      const t0 = performance.now();
      f();
      status(`${label} done in ${((performance.now() - t0) / 1000).toFixed(2)} s`);
    } catch (e) {
      status("error: " + e);
    }
  });
}

function plotLine(ys, xs, title) {
  const W = canvas.width, H = canvas.height, pad = 40;
  ctx.clearRect(0, 0, W, H);
  const lo = Math.min(...ys), hi = Math.max(...ys);
  const span = hi - lo || 1;
  const x = (i) => pad + (i / Math.max(ys.length - 1, 1)) * (W - 2 * pad);
  const y = (v) => H - pad - ((v - lo) / span) * (H - 2 * pad);
  ctx.strokeStyle = "#999";
  ctx.strokeRect(pad, pad, W - 2 * pad, H - 2 * pad);
  ctx.fillStyle = "#222";
  ctx.fillText(title, pad, pad - 10);
  ctx.fillText(hi.toFixed(4), 2, pad + 4);
  ctx.fillText(lo.toFixed(4), 2, H - pad);
  ctx.fillText(xs[0], pad, H - pad + 14);
  ctx.fillText(xs[xs.length - 1], W - pad - 20, H - pad + 14);
  ctx.strokeStyle = "#1f6feb";
  ctx.beginPath();
  ys.forEach((v, i) => (i ? ctx.lineTo(x(i), y(v)) : ctx.moveTo(x(i), y(v))));
  ctx.stroke();
  ys.forEach((v, i) => ctx.fillRect(x(i) - 2, y(v) - 2, 4, 4));
}

function showMetrics(rows) {
  const t = $("metrics");
  t.innerHTML = "<tr><th></th><th>MAP@10</th><th>NDCG@10</th></tr>";
  for (const [name, m] of rows) {
    t.insertAdjacentHTML("beforeend",
      `<tr><th>${name}</th><td>${m[0].toFixed(4)}</td><td>${m[1].toFixed(4)}</td></tr>`);
  }
}

function heatmap(values, n, k, groups) {
  const order = [...Array(n).keys()].sort((a, b) => groups[a] - groups[b] || a - b);
  const W = canvas.width, H = canvas.height;
  ctx.clearRect(0, 0, W, H);
  const cw = W / n, ch = H / k;
  order.forEach((u, col) => {
    for (let j = 0; j < k; j++) {
      const v = values[u * k + j];
      const c = Math.round(255 * (1 - v));
      ctx.fillStyle = `rgb(${c},${c},255)`;
      ctx.fillRect(col * cw, j * ch, Math.ceil(cw), Math.ceil(ch));
    }
  });
  // community boundaries
  ctx.strokeStyle = "#d00";
  for (let col = 1; col < n; col++) {
    if (groups[order[col]] !== groups[order[col - 1]]) {
      ctx.beginPath();
      ctx.moveTo(col * cw, 0);
      ctx.lineTo(col * cw, H);
      ctx.stroke();
    }
  }
}

function load() {
  run("generating", () => {
    lab = new Lab(num("upc"), BigInt(num("seed")));
    showMetrics([["pop", lab.pop_metrics()]]);
    ctx.clearRect(0, 0, canvas.width, canvas.height);
  });
}

await init();
$("load").onclick = load;
$("train").onclick = () => run("training", () => {
  const losses = lab.train(num("alpha"), num("beta"), num("k"), num("epochs"));
  showMetrics([["tdae", lab.model_metrics()], ["pop", lab.pop_metrics()]]);
  plotLine(Array.from(losses), [1, losses.length], "training loss per epoch");
});
$("sweep").onclick = () => run("sweeping", () => {
  const maps = lab.alpha_sweep(6, num("beta"), num("k"), num("epochs"));
  plotLine(Array.from(maps), ["α=0", "α=1"], "MAP@10 against α");
});
$("heat").onclick = () => run("encoding", () => {
  if (!lab) throw "generate data first";
  const p = lab.fused();
  heatmap(p, lab.n_users(), p.length / lab.n_users(), lab.communities());
});
load();
