import init, { Demo, sensitivity } from "./pkg/hte_wasm.js";

const $ = (id) => document.getElementById(id);
const fmt = (v, d = 3) => (v == null || Number.isNaN(v) ? "-" : v.toFixed(d));

function axes(ctx, w, h, xr, yr, pad) {
  const sx = (x) => pad + ((x - xr[0]) / (xr[1] - xr[0])) * (w - 2 * pad);
  const sy = (y) => h - pad - ((y - yr[0]) / (yr[1] - yr[0])) * (h - 2 * pad);
  ctx.clearRect(0, 0, w, h);
  ctx.strokeStyle = "#999";
  ctx.strokeRect(pad, pad, w - 2 * pad, h - 2 * pad);
  ctx.fillStyle = "#555";
  ctx.font = "11px sans-serif";
  ctx.fillText(yr[1].toFixed(2), 2, pad + 4);
  ctx.fillText(yr[0].toFixed(2), 2, h - pad);
  ctx.fillText(xr[0].toFixed(2), pad, h - pad + 14);
  ctx.fillText(xr[1].toFixed(2), w - pad - 24, h - pad + 14);
  return [sx, sy];
}

function drawCate(v) {
  const c = $("cate"), ctx = c.getContext("2d");
  const ys = v.lo.concat(v.hi, v.truth).filter(Number.isFinite);
  const yr = [Math.min(...ys), Math.max(...ys)];
  const [sx, sy] = axes(ctx, c.width, c.height, [-1, 1], yr, 36);
  v.x1.forEach((x, i) => {
    ctx.strokeStyle = "rgba(0,0,0,0.15)";
    ctx.beginPath();
    ctx.moveTo(sx(x), sy(v.lo[i]));
    ctx.lineTo(sx(x), sy(v.hi[i]));
    ctx.stroke();
    ctx.fillStyle = "#1f5fbf";
    ctx.fillRect(sx(x) - 1.5, sy(v.median[i]) - 1.5, 3, 3);
    ctx.fillStyle = "#000";
    ctx.fillRect(sx(x) - 1, sy(v.truth[i]) - 1, 2, 2);
  });
}

function drawScores(v) {
  const rows = v.scores.slice().sort((a, b) => a.rmse - b.rmse)
    .map((s) => `<tr><td>${s.name}</td><td>${fmt(s.rmse)}</td></tr>`).join("");
  $("scores").innerHTML = `<tr><th>estimator</th><th>RMSE</th></tr>${rows}`;
  const fails = v.failures.length ? ` Failed: ${v.failures.join("; ")}.` : "";
  $("simsummary").textContent =
    `${v.kind}, n = ${v.n}: true average effect ${fmt(v.true_ate)}, ` +
    `mean estimator spread ${fmt(v.mean_spread)}, mean sign agreement ${fmt(v.mean_sign_agreement)}.${fails}`;
}

function drawCurve(r) {
  const c = $("pcurve"), ctx = c.getContext("2d");
  const g = r.grid;
  const [sx, sy] = axes(ctx, c.width, c.height, [1, g[g.length - 1].gamma], [0, 1], 36);
  ctx.strokeStyle = "#c33";
  ctx.beginPath();
  ctx.moveTo(sx(1), sy(r.alpha));
  ctx.lineTo(sx(g[g.length - 1].gamma), sy(r.alpha));
  ctx.stroke();
  ctx.strokeStyle = "#1f5fbf";
  ctx.beginPath();
  g.forEach((p, i) => (i ? ctx.lineTo : ctx.moveTo).call(ctx, sx(p.gamma), sy(p.p_upper)));
  ctx.stroke();
  const star = r.gamma_star == null ? "not significant even at gamma = 1" : `gamma* = ${fmt(r.gamma_star, 2)}`;
  $("senssummary").textContent =
    `${r.n_pairs} pairs (${r.n_nonzero} nonzero), T+ = ${r.t_plus}, ${r.exact ? "exact" : "normal approximation"}; ${star}.`;
}

function gauss() {
  const u = 1 - Math.random(), v = Math.random();
  return Math.sqrt(-2 * Math.log(u)) * Math.cos(2 * Math.PI * v);
}

async function main() {
  await init();
  const demo = new Demo();
  const status = $("status");
  status.textContent = "Ready.";

  const fail = (e) => { status.textContent = String(e); status.className = "err"; };
  const ok = (msg) => { status.textContent = msg; status.className = ""; };

  const decide = () => {
    const t = Number($("threshold").value);
    $("thv").textContent = t.toFixed(2);
    try {
      const d = JSON.parse(demo.decide($("mode").value, t));
      $("decisions").textContent =
        `treat ${d.treat}, withhold ${d.withhold}, abstain ${d.abstain}; ` +
        `agreement with the true effect among decided units: ${fmt(d.accuracy)}`;
    } catch (e) {
      $("decisions").textContent = String(e);
    }
  };

  $("run").onclick = () => {
    ok("Fitting...");
    setTimeout(() => {
      try {
        const t0 = performance.now();
        const v = JSON.parse(demo.simulate($("kind").value, Number($("n").value), Number($("seed").value)));
        drawCate(v);
        drawScores(v);
        decide();
        ok(`Fitted ${v.scores.length} estimators in ${((performance.now() - t0) / 1000).toFixed(1)} s.`);
      } catch (e) {
        fail(e);
      }
    }, 10);
  };
  $("threshold").oninput = decide;
  $("mode").onchange = decide;

  $("example").onclick = () => {
    const shift = Number($("shift").value);
    $("diffs").value = Array.from({ length: 40 }, () => (shift + gauss()).toFixed(2)).join(" ");
  };
  $("sens").onclick = () => {
    try {
      drawCurve(JSON.parse(sensitivity($("diffs").value, Number($("gmax").value), 0.05, Number($("alpha").value))));
      ok("Ready.");
    } catch (e) {
      fail(e);
    }
  };
  $("example").onclick();
}

main();
