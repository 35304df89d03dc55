import init, { fieldSnapshot, kernelVerdict, lawComparison } from "./pkg/swave_demo.js";

const num = (id) => Number(document.getElementById(id).value);
const out = (id, text) => { document.getElementById(id).textContent = text; };

function run(button, target, work) {
  document.getElementById(button).addEventListener("click", () => {
    out(target, "running…");
    // Let the status paint before the synchronous wasm call blocks the page.
    setTimeout(() => {
      const start = performance.now();
      try {
        work();
        out(target, document.getElementById(target).textContent + `\n(${(performance.now() - start).toFixed(0)} ms)`);
      } catch (e) {
        out(target, `error: ${e.message ?? e}`);
      }
    }, 10);
  });
}

function drawField(f) {
  const canvas = document.getElementById("f-canvas");
  const ctx = canvas.getContext("2d");
  const img = ctx.createImageData(f.side, f.side);
  const span = f.max - f.min || 1;
  f.values.forEach((v, i) => {
    const s = (v - f.min) / span;
    img.data.set([255 * s, 80, 255 * (1 - s), 255], 4 * i);
  });
  const tmp = new OffscreenCanvas(f.side, f.side);
  tmp.getContext("2d").putImageData(img, 0, 0);
  ctx.imageSmoothingEnabled = false;
  ctx.drawImage(tmp, 0, 0, canvas.width, canvas.height);
}

function drawLaw(c) {
  const canvas = document.getElementById("l-canvas");
  const ctx = canvas.getContext("2d");
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  const x0 = c.x[0], x1 = c.x[c.x.length - 1];
  const top = Math.max(...c.kde, ...c.normal) * 1.05;
  const px = (x) => ((x - x0) / (x1 - x0)) * canvas.width;
  const py = (y) => canvas.height - (y / top) * canvas.height;
  for (const [ys, colour] of [[c.normal, "#999"], [c.kde, "#1f5fbf"]]) {
    ctx.strokeStyle = colour;
    ctx.lineWidth = 2;
    ctx.beginPath();
    ys.forEach((y, i) => (i ? ctx.lineTo(px(c.x[i]), py(y)) : ctx.moveTo(px(c.x[i]), py(y))));
    ctx.stroke();
  }
}

await init();

run("f-run", "f-out", () => {
  const f = JSON.parse(fieldSnapshot(num("f-cutoff"), num("f-beta"), num("f-steps"), num("f-sigma"), num("f-drift"), num("f-seed")));
  drawField(f);
  out("f-out", `${f.side} × ${f.side} lattice, u ranges over [${f.min.toFixed(3)}, ${f.max.toFixed(3)}]`);
});

run("k-run", "k-out", () => {
  const v = JSON.parse(kernelVerdict(num("k-d"), num("k-beta")));
  const rows = v.levels.map((l) => `  R = ${l.radius.toExponential(0).padEnd(6)} ${l.value.toPrecision(8)}`);
  const el = document.getElementById("k-out");
  el.className = v.verdict;
  out("k-out", `d = ${v.d}, β = ${v.beta}: ${v.verdict}\n${rows.join("\n")}`);
});

run("l-run", "l-out", () => {
  const c = JSON.parse(lawComparison(num("l-cutoff"), num("l-beta"), num("l-steps"), num("l-replicas"), num("l-seed")));
  drawLaw(c);
  out("l-out", [
    `replicas        ${c.replicas}`,
    `exact variance  ${c.oracle_variance.toPrecision(6)}`,
    `sample variance ${c.sample_variance.toPrecision(6)}`,
    `KS p-value      ${c.ks_p_value.toPrecision(3)}`,
  ].join("\n"));
});
