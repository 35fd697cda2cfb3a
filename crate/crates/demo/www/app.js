import init, { build_tree, traffic_curve, tradeoff } from "./pkg/msense_demo.js";

const $ = (id) => document.getElementById(id);
const num = (id) => Number($(id).value);
const COLORS = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

function hue(k, n) {
  return `hsl(${Math.round((360 * k) / Math.max(n, 1))}, 65%, 62%)`;
}

let tree = null;

function drawTree() {
  if (!tree) return;
  const cv = $("t-canvas");
  const g = cv.getContext("2d");
  const sx = cv.width / tree.width;
  const sy = cv.height / tree.height;
  const level = Math.min(num("t-level"), tree.depth);
  const clusters = tree.levels[level];
  const owner = new Array(tree.centers.length);
  clusters.forEach(([, members], k) => members.forEach((c) => (owner[c] = k)));

  g.clearRect(0, 0, cv.width, cv.height);
  const side = Math.sqrt(tree.centers.length);
  const w = cv.width / side;
  const h = cv.height / side;
  tree.centers.forEach(([x, y], c) => {
    g.fillStyle = hue(owner[c], clusters.length);
    g.fillRect(x * sx - w / 2, y * sy - h / 2, w, h);
  });
  g.fillStyle = "#000";
  for (const b of tree.blockages) {
    g.fillRect((b.x - b.w / 2) * sx, (b.y - b.h / 2) * sy, Math.max(b.w * sx, 2), Math.max(b.h * sy, 2));
  }
  for (const [head] of clusters) {
    const [x, y] = tree.centers[head];
    g.beginPath();
    g.arc(x * sx, y * sy, 4, 0, 2 * Math.PI);
    g.fill();
  }
  $("t-out").textContent =
    `depth ${tree.depth}, cost per cell ${tree.cost_per_cell.toFixed(2)} m, max delay ${tree.max_delay}\n` +
    `level ${level}: ${clusters.length} clusters (dots mark heads)`;
}

function runTree() {
  try {
    tree = JSON.parse(
      build_tree(num("t-side"), num("t-block"), BigInt(num("t-seed")), num("t-gamma"), num("t-cmax"), $("t-random").checked),
    );
    $("t-level").max = tree.depth;
    drawTree();
  } catch (e) {
    $("t-out").textContent = String(e);
  }
}

function axes(g, cv, x0, x1, y0, y1, xlabel, ylabel) {
  const pad = 40;
  const px = (x) => pad + ((x - x0) / (x1 - x0)) * (cv.width - 2 * pad);
  const py = (y) => cv.height - pad - ((y - y0) / (y1 - y0 || 1)) * (cv.height - 2 * pad);
  g.clearRect(0, 0, cv.width, cv.height);
  g.strokeStyle = "#888";
  g.strokeRect(pad, pad, cv.width - 2 * pad, cv.height - 2 * pad);
  g.fillStyle = "#333";
  g.fillText(xlabel, cv.width / 2 - 20, cv.height - 10);
  g.fillText(ylabel, 4, pad - 10);
  g.fillText(x0.toPrecision(3), pad, cv.height - pad + 14);
  g.fillText(x1.toPrecision(3), cv.width - pad - 20, cv.height - pad + 14);
  g.fillText(y1.toPrecision(3), 2, pad + 4);
  g.fillText(y0.toPrecision(3), 2, cv.height - pad);
  return { px, py };
}

function line(g, xs, ys, px, py, color) {
  g.strokeStyle = color;
  g.beginPath();
  xs.forEach((x, k) => (k ? g.lineTo(px(x), py(ys[k])) : g.moveTo(px(x), py(ys[k]))));
  g.stroke();
}

function runCurve() {
  try {
    const lambda = Math.pow(10, num("c-lambda"));
    const c = JSON.parse(traffic_curve(num("c-ip"), num("c-is"), num("c-m"), lambda, num("c-phi")));
    const cv = $("c-canvas");
    const g = cv.getContext("2d");
    const all = c.throughput.concat(c.utility);
    const lo = Math.min(0, ...all);
    const hi = Math.max(...all);
    const { px, py } = axes(g, cv, 0, c.traffic[c.traffic.length - 1], lo, hi, "traffic a", "");
    line(g, c.traffic, c.throughput, px, py, COLORS[0]);
    line(g, c.traffic, c.utility, px, py, COLORS[1]);
    g.strokeStyle = "#000";
    g.setLineDash([4, 4]);
    g.beginPath();
    g.moveTo(px(c.optimal), py(lo));
    g.lineTo(px(c.optimal), py(hi));
    g.stroke();
    g.setLineDash([]);
    $("c-out").textContent =
      `lambda ${lambda.toExponential(2)}: optimal traffic ${c.optimal.toFixed(4)}, utility ${c.optimal_utility.toFixed(5)}\n` +
      "blue: throughput bound, red: utility";
  } catch (e) {
    $("c-out").textContent = String(e);
  }
}

function runSweep() {
  $("s-out").textContent = "running...";
  setTimeout(() => {
    try {
      const curves = JSON.parse(tradeoff(num("s-block"), BigInt(num("s-seed")), num("s-trials"), num("s-frames")));
      const finite = (v) => Number.isFinite(v);
      const xs = curves.flatMap((c) => c.inr_db.filter(finite));
      const ys = curves.flatMap((c) => c.throughput);
      const cv = $("s-canvas");
      const g = cv.getContext("2d");
      const { px, py } = axes(g, cv, Math.min(...xs), Math.max(...xs), 0, Math.max(...ys), "mean INR at PUs (dB)", "SU throughput");
      const legend = [];
      curves.forEach((c, k) => {
        const keep = c.inr_db.map((x, i) => [x, c.throughput[i]]).filter(([x]) => finite(x)).sort((a, b) => a[0] - b[0]);
        line(g, keep.map((p) => p[0]), keep.map((p) => p[1]), px, py, COLORS[k]);
        legend.push(`${c.scheme}: ${COLORS[k]}`);
      });
      $("s-out").textContent = legend.join("\n");
    } catch (e) {
      $("s-out").textContent = String(e);
    }
  }, 10);
}

await init();
$("t-run").onclick = runTree;
$("t-level").oninput = drawTree;
for (const id of ["c-ip", "c-is", "c-m", "c-lambda", "c-phi"]) $(id).oninput = runCurve;
$("s-run").onclick = runSweep;
runTree();
runCurve();
