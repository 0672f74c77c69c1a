import init, { coupled_paths, level_masses, likelihood_estimates } from "./pkg/unbiased_diffusion_demo.js";

const num = (id) => Number(document.getElementById(id).value);

function axes(ctx, w, h, pad) {
  ctx.clearRect(0, 0, w, h);
  ctx.strokeStyle = "#999";
  ctx.beginPath();
  ctx.moveTo(pad, pad);
  ctx.lineTo(pad, h - pad);
  ctx.lineTo(w - pad, h - pad);
  ctx.stroke();
}

function report(id, fn) {
  const out = document.getElementById(id);
  out.classList.remove("error");
  try {
    out.textContent = fn();
  } catch (e) {
    out.classList.add("error");
    out.textContent = String(e.message ?? e);
  }
}

function drawPaths() {
  report("p-out", () => {
    const horizon = 20;
    const v = coupled_paths(num("p-a"), num("p-b"), num("p-level"), horizon, BigInt(num("p-seed")));
    const fine = v.slice(0, horizon + 1);
    const coarse = v.slice(horizon + 1);
    const canvas = document.getElementById("p-canvas");
    const ctx = canvas.getContext("2d");
    const pad = 20;
    axes(ctx, canvas.width, canvas.height, pad);
    const lo = Math.min(...fine, ...coarse);
    const hi = Math.max(...fine, ...coarse);
    const sx = (t) => pad + (t / horizon) * (canvas.width - 2 * pad);
    const sy = (x) => canvas.height - pad - ((x - lo) / (hi - lo || 1)) * (canvas.height - 2 * pad);
    for (const [path, colour] of [[coarse, "#d95f02"], [fine, "#1b9e77"]]) {
      ctx.strokeStyle = colour;
      ctx.beginPath();
      path.forEach((x, t) => (t === 0 ? ctx.moveTo(sx(t), sy(x)) : ctx.lineTo(sx(t), sy(x))));
      ctx.stroke();
    }
    const gap = Math.max(...fine.map((x, t) => Math.abs(x - coarse[t])));
    return `fine (green) and coarse (orange); largest gap ${gap.toExponential(2)}`;
  });
}

function drawLevels() {
  report("l-out", () => {
    const masses = level_masses(num("l-beta"), num("l-alpha"), num("l-max"));
    const canvas = document.getElementById("l-canvas");
    const ctx = canvas.getContext("2d");
    const pad = 20;
    axes(ctx, canvas.width, canvas.height, pad);
    const top = Math.max(...masses);
    const bw = (canvas.width - 2 * pad) / masses.length;
    ctx.fillStyle = "#7570b3";
    masses.forEach((m, i) => {
      const h = (m / top) * (canvas.height - 2 * pad);
      ctx.fillRect(pad + i * bw + 2, canvas.height - pad - h, bw - 4, h);
    });
    return Array.from(masses, (m, i) => `p${i + 1} = ${m.toPrecision(3)}`).join(", ");
  });
}

function drawLikelihood() {
  report("z-out", () => {
    const v = likelihood_estimates(
      num("z-a"), num("z-b"), num("z-level"), num("z-n"), num("z-reps"), BigInt(1),
    );
    const exact = v[0];
    const rel = Array.from(v.slice(1), (l) => l - exact);
    const canvas = document.getElementById("z-canvas");
    const ctx = canvas.getContext("2d");
    const pad = 20;
    axes(ctx, canvas.width, canvas.height, pad);
    const lo = Math.min(...rel);
    const hi = Math.max(...rel);
    const bins = new Array(40).fill(0);
    for (const r of rel) {
      bins[Math.min(39, Math.floor(((r - lo) / (hi - lo || 1)) * 40))] += 1;
    }
    const top = Math.max(...bins);
    const bw = (canvas.width - 2 * pad) / bins.length;
    ctx.fillStyle = "#1b9e77";
    bins.forEach((c, i) => {
      const h = (c / top) * (canvas.height - 2 * pad);
      ctx.fillRect(pad + i * bw + 1, canvas.height - pad - h, bw - 2, h);
    });
    const mean = rel.reduce((s, r) => s + Math.exp(r), 0) / rel.length;
    return `log Z = ${exact.toFixed(3)}; mean of Ẑ / Z over ${rel.length} runs = ${mean.toFixed(3)}`;
  });
}

await init();
document.getElementById("p-run").onclick = drawPaths;
document.getElementById("l-run").onclick = drawLevels;
document.getElementById("z-run").onclick = drawLikelihood;
drawPaths();
drawLevels();
drawLikelihood();
