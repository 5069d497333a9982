import init, { scanAndFit, yawLossCurve, boxOverlap } from "./pkg/autolabel3d_demo.js";

const num = (id) => parseFloat(document.getElementById(id).value);

function sceneParams() {
  return JSON.stringify({
    seed: Math.max(0, Math.floor(num("seed"))),
    yaw_deg: num("yaw"),
    x: num("x"),
    z: num("z"),
    outlier_fraction: num("outliers"),
  });
}

// Maps bird's-eye (x, z) metres onto a canvas around a centre point.
function view(canvas, cx, cz, span) {
  const s = canvas.width / span;
  return ([x, z]) => [canvas.width / 2 + (x - cx) * s, canvas.height / 2 - (z - cz) * s];
}

function polygon(ctx, pts, to, colour) {
  ctx.strokeStyle = colour;
  ctx.lineWidth = 2;
  ctx.beginPath();
  pts.forEach((p, i) => {
    const [u, v] = to(p);
    i === 0 ? ctx.moveTo(u, v) : ctx.lineTo(u, v);
  });
  ctx.closePath();
  ctx.stroke();
}

function drawScan() {
  const out = document.getElementById("scan-out");
  const r = JSON.parse(scanAndFit(sceneParams()));
  const canvas = document.getElementById("scan");
  const ctx = canvas.getContext("2d");
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  if (r.error) {
    out.textContent = r.error;
    return;
  }
  const to = view(canvas, num("x"), num("z"), 10);
  for (const [x, z, outlier] of r.points) {
    const [u, v] = to([x, z]);
    ctx.fillStyle = outlier ? "#e67e22" : "#2c3e50";
    ctx.fillRect(u - 1.5, v - 1.5, 3, 3);
  }
  polygon(ctx, r.gt, to, "#c0392b");
  polygon(ctx, r.fit, to, "#27ae60");
  out.textContent =
    `${r.points.length} points, fitted yaw ${r.fit_yaw_deg.toFixed(1)} deg ` +
    `after ${r.fit_iterations} iterations`;
}

function drawCurve() {
  const out = document.getElementById("curve-out");
  const r = JSON.parse(yawLossCurve(sceneParams(), Math.floor(num("bins"))));
  const canvas = document.getElementById("curve");
  const ctx = canvas.getContext("2d");
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  if (r.error) {
    out.textContent = r.error;
    return;
  }
  const losses = r.curve.map((c) => c[1]);
  const hi = Math.max(...losses);
  const pad = 20;
  const u = (deg) => pad + (deg / 360) * (canvas.width - 2 * pad);
  const v = (loss) => canvas.height - pad - (loss / hi) * (canvas.height - 2 * pad);
  ctx.strokeStyle = "#c0392b";
  ctx.beginPath();
  ctx.moveTo(u(r.gt_yaw_deg), pad);
  ctx.lineTo(u(r.gt_yaw_deg), canvas.height - pad);
  ctx.stroke();
  ctx.strokeStyle = "#2c3e50";
  ctx.beginPath();
  r.curve.forEach(([deg, loss], i) => (i === 0 ? ctx.moveTo(u(deg), v(loss)) : ctx.lineTo(u(deg), v(loss))));
  ctx.stroke();
  let best = 0;
  losses.forEach((l, i) => { if (l < losses[best]) best = i; });
  out.textContent =
    `best bin ${best} at ${r.curve[best][0].toFixed(1)} deg (loss ${losses[best].toFixed(4)}); ` +
    `ground truth ${r.gt_yaw_deg.toFixed(1)} deg`;
}

function boxParams(p) {
  return JSON.stringify({
    x: num(p + "x"), y: 0, z: num(p + "z"),
    length: num(p + "l"), width: num(p + "w"), height: 1.5,
    yaw_deg: num(p + "yaw"),
  });
}

function drawBoxes() {
  const out = document.getElementById("iou-out");
  const r = JSON.parse(boxOverlap(boxParams("a"), boxParams("b")));
  const canvas = document.getElementById("boxes");
  const ctx = canvas.getContext("2d");
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  if (r.error) {
    out.textContent = r.error;
    return;
  }
  const to = view(canvas, (num("ax") + num("bx")) / 2, (num("az") + num("bz")) / 2, 10);
  polygon(ctx, r.a, to, "#c0392b");
  polygon(ctx, r.b, to, "#27ae60");
  out.textContent =
    `BEV IoU ${r.bev_iou.toFixed(4)}, 3D IoU ${r.iou_3d.toFixed(4)}, ` +
    `intersection ${r.intersection_area.toFixed(3)} m^2`;
}

await init();
for (const id of ["seed", "yaw", "x", "z", "outliers"]) {
  document.getElementById(id).addEventListener("input", () => { drawScan(); drawCurve(); });
}
document.getElementById("bins").addEventListener("input", drawCurve);
for (const p of ["a", "b"]) {
  for (const f of ["x", "z", "l", "w", "yaw"]) {
    document.getElementById(p + f).addEventListener("input", drawBoxes);
  }
}
drawScan();
drawCurve();
drawBoxes();
