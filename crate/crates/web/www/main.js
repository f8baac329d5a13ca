import init, { compare_icons, projection_demo, knee_demo } from "./pkg/lookalike_web.js";

const $ = (id) => document.getElementById(id);

function drawSample(canvas, hue, shape) {
  const ctx = canvas.getContext("2d");
  ctx.fillStyle = `hsl(${hue}, 70%, 55%)`;
  ctx.fillRect(0, 0, canvas.width, canvas.height);
  ctx.fillStyle = `hsl(${(hue + 180) % 360}, 80%, 90%)`;
  ctx.beginPath();
  if (shape === "circle") {
    ctx.arc(32, 32, 20, 0, 2 * Math.PI);
  } else {
    ctx.moveTo(32, 8);
    ctx.lineTo(56, 56);
    ctx.lineTo(8, 56);
    ctx.closePath();
  }
  ctx.fill();
}

function loadInto(input, canvas) {
  const file = input.files[0];
  if (!file) return;
  const img = new Image();
  img.onload = () => {
    const ctx = canvas.getContext("2d");
    ctx.clearRect(0, 0, canvas.width, canvas.height);
    ctx.drawImage(img, 0, 0, canvas.width, canvas.height);
    URL.revokeObjectURL(img.src);
  };
  img.src = URL.createObjectURL(file);
}

function pixels(canvas) {
  const ctx = canvas.getContext("2d");
  return ctx.getImageData(0, 0, canvas.width, canvas.height);
}

function drawHeatmap(canvas, matrix) {
  const ctx = canvas.getContext("2d");
  const n = matrix.length;
  const cell = canvas.width / n;
  let max = 0;
  for (const row of matrix) for (const v of row) max = Math.max(max, Math.abs(v));
  for (let i = 0; i < n; i++) {
    for (let j = 0; j < n; j++) {
      const t = max > 0 ? Math.abs(matrix[i][j]) / max : 0;
      const c = Math.round(255 * (1 - t));
      ctx.fillStyle = `rgb(${c},${c},255)`;
      ctx.fillRect(j * cell, i * cell, cell, cell);
    }
  }
}

function runCompare() {
  const a = pixels($("canvas-a"));
  const b = pixels($("canvas-b"));
  try {
    const r = JSON.parse(
      compare_icons(a.data, a.width, a.height, b.data, b.width, b.height,
        Number($("alpha").value), Number($("compare-seed").value)),
    );
    drawHeatmap($("gram-a"), r.gram_a);
    drawHeatmap($("gram-b"), r.gram_b);
    const fmt = (x) => x.toFixed(6);
    $("compare-out").textContent = [
      `content cosine   ${fmt(r.content_cos)}`,
      `style cosine     ${fmt(r.style_cos)}`,
      `content L2       ${fmt(r.content_l2)}`,
      `style L2         ${fmt(r.style_l2)}`,
      `combined cosine  ${fmt(r.combined_cos)}  (alpha ${r.alpha}, max ${1 + r.alpha})`,
      `normalized       ${fmt(r.combined_normalized)}`,
    ].join("\n");
  } catch (e) {
    $("compare-out").textContent = `error: ${e}`;
  }
}

// Same shapes as A, shifted hue: style changes, layout does not.
function recolor() {
  const src = pixels($("canvas-a"));
  const out = new ImageData(src.width, src.height);
  for (let i = 0; i < src.data.length; i += 4) {
    out.data[i] = src.data[i + 2];
    out.data[i + 1] = src.data[i];
    out.data[i + 2] = src.data[i + 1];
    out.data[i + 3] = 255;
  }
  $("canvas-b").getContext("2d").putImageData(out, 0, 0);
  runCompare();
}

function drawHistogram(canvas, ratios) {
  const ctx = canvas.getContext("2d");
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  const bins = new Array(40).fill(0);
  for (const q of ratios) {
    const b = Math.floor(((q - 0.6) / 0.8) * bins.length);
    if (b >= 0 && b < bins.length) bins[b]++;
  }
  const max = Math.max(1, ...bins);
  const w = canvas.width / bins.length;
  bins.forEach((c, i) => {
    const center = 0.6 + ((i + 0.5) / bins.length) * 0.8;
    ctx.fillStyle = Math.abs(center - 1) <= 0.15 ? "#4a7" : "#c55";
    const h = (c / max) * (canvas.height - 10);
    ctx.fillRect(i * w, canvas.height - h, w - 1, h);
  });
  ctx.fillStyle = "#000";
  ctx.fillText("0.6", 2, 10);
  ctx.fillText("1.4", canvas.width - 20, 10);
}

function runProjection() {
  try {
    const r = JSON.parse(
      projection_demo(Number($("proj-d").value), Number($("proj-k").value),
        Number($("proj-seed").value), Number($("proj-samples").value)),
    );
    drawHistogram($("proj-hist"), r.ratios);
    $("proj-out").textContent = [
      `nonzeros         ${r.nonzeros}`,
      `density          ${r.density.toFixed(5)} (expected ${r.expected_density.toFixed(5)})`,
      `entry magnitude  ${r.magnitude.toFixed(4)}`,
      `pairs within 15% ${r.within_15_percent} / ${r.pairs}`,
    ].join("\n");
  } catch (e) {
    $("proj-out").textContent = `error: ${e}`;
  }
}

function curve(shape) {
  const f = { sqrt: Math.sqrt, log: (x) => Math.log(1 + 9 * x) / Math.log(10), line: (x) => x }[shape];
  const pts = [];
  for (let i = 0; i <= 100; i++) {
    const x = i / 100;
    pts.push([x, f(x)]);
  }
  return pts;
}

function plot(canvas, pts, knee) {
  const ctx = canvas.getContext("2d");
  const { width: w, height: h } = canvas;
  ctx.clearRect(0, 0, w, h);
  const xs = pts.map((p) => p[0]);
  const ys = pts.map((p) => p[1]);
  const [x0, x1, y0, y1] = [Math.min(...xs), Math.max(...xs), Math.min(...ys), Math.max(...ys)];
  const px = (x) => 10 + ((x - x0) / (x1 - x0 || 1)) * (w - 20);
  const py = (y) => h - 10 - ((y - y0) / (y1 - y0 || 1)) * (h - 20);
  ctx.strokeStyle = "#36c";
  ctx.beginPath();
  pts.forEach(([x, y], i) => (i ? ctx.lineTo(px(x), py(y)) : ctx.moveTo(px(x), py(y))));
  ctx.stroke();
  if (knee !== null) {
    ctx.strokeStyle = "#c33";
    ctx.beginPath();
    ctx.moveTo(px(knee), 0);
    ctx.lineTo(px(knee), h);
    ctx.stroke();
  }
}

function runKnee() {
  const shape = $("knee-shape").value;
  if (shape !== "custom") $("knee-points").value = JSON.stringify(curve(shape));
  try {
    const text = $("knee-points").value;
    const r = JSON.parse(knee_demo(text));
    plot($("knee-plot"), JSON.parse(text), r.knee);
    $("knee-out").textContent = r.knee === null
      ? "no knee"
      : `knee at x = ${r.knee}\nindex ${r.index}\ndifference ${r.difference.toFixed(4)}`;
  } catch (e) {
    $("knee-out").textContent = `error: ${e}`;
  }
}

await init();
drawSample($("canvas-a"), 210, "circle");
drawSample($("canvas-b"), 20, "triangle");
$("file-a").addEventListener("change", () => loadInto($("file-a"), $("canvas-a")));
$("file-b").addEventListener("change", () => loadInto($("file-b"), $("canvas-b")));
$("compare-run").addEventListener("click", runCompare);
$("compare-recolor").addEventListener("click", recolor);
$("proj-run").addEventListener("click", runProjection);
$("knee-run").addEventListener("click", runKnee);
runCompare();
runProjection();
runKnee();
