import init, { RingSim, shield_verdicts, idm_curve, action_names, vehicle_stride } from "./pkg/cav_marl_demo.js";

await init();

const $ = (id) => document.getElementById(id);
const names = action_names();
const stride = vehicle_stride();

// ring road

const ring = $("ring").getContext("2d");
let sim = null;
let paused = false;

function restart() {
  try {
    sim = new RingSim(BigInt($("seed").value), Number($("n").value), Number($("ratio").value), $("shielded").checked);
    $("stats").textContent = "";
  } catch (e) {
    sim = null;
    $("stats").textContent = String(e);
  }
}

function drawRing() {
  const { width, height } = ring.canvas;
  ring.clearRect(0, 0, width, height);
  if (!sim) return;
  const cx = width / 2, cy = height / 2;
  const lanes = sim.lanes();
  const outer = 230, laneWidth = 22;
  const radius = (lane) => outer - (lane + 0.5) * laneWidth;
  ring.strokeStyle = "#bbb";
  for (let k = 0; k <= lanes; k++) {
    ring.beginPath();
    ring.arc(cx, cy, outer - k * laneWidth, 0, 2 * Math.PI);
    ring.stroke();
  }
  const length = sim.road_length();
  const v = sim.vehicles();
  for (let i = 0; i < v.length; i += stride) {
    const [pos, lane, kind, action] = [v[i], v[i + 1], v[i + 2], v[i + 3]];
    const angle = (2 * Math.PI * pos) / length;
    const r = radius(lane);
    ring.save();
    ring.translate(cx + r * Math.cos(angle), cy + r * Math.sin(angle));
    ring.rotate(angle + Math.PI / 2);
    ring.fillStyle = action === 3 ? "#d22" : action === 1 || action === 2 ? "#e9a400" : kind === 0 ? "#1f6fd1" : kind === 1 ? "#888" : "#000";
    // 4.5 m vehicles drawn to scale along the ring
    const len = (4.5 / length) * 2 * Math.PI * r;
    ring.fillRect(-6, -len, 12, len);
    ring.restore();
  }
  const [t, mean, gap, collisions, overrides, episode] = sim.stats();
  $("stats").textContent =
    `time        ${t.toFixed(1)} s\n` +
    `mean speed  ${mean.toFixed(2)} m/s\n` +
    `lowest gap  ${Number.isFinite(gap) ? gap.toFixed(2) : "-"} m (safe distance ${sim.safe_distance()} m)\n` +
    `collisions  ${collisions}\n` +
    `overrides   ${overrides}\n` +
    `episode     ${episode}`;
}

function frame() {
  if (sim && !paused) {
    try {
      sim.advance(Number($("speed").value));
    } catch (e) {
      $("stats").textContent = String(e);
      sim = null;
    }
  }
  drawRing();
  requestAnimationFrame(frame);
}

for (const id of ["n", "ratio", "seed", "shielded"]) $(id).addEventListener("change", restart);
$("reset").addEventListener("click", restart);
$("pause").addEventListener("click", () => {
  paused = !paused;
  $("pause").textContent = paused ? "Resume" : "Pause";
});

// shield verdicts

function verdicts() {
  const gaps = [0, 1, 2].map((k) => ($(`p${k}`).checked ? Number($(`g${k}`).value) : NaN));
  const speeds = [0, 1, 2].map((k) => Number($(`s${k}`).value));
  const row = $("verdict");
  try {
    const out = shield_verdicts(Number($("ego").value), new Float64Array(gaps), new Float64Array(speeds), Number($("proposed").value));
    row.innerHTML =
      [0, 1, 2].map((k) => `<td class="${out[k] ? "safe" : "unsafe"}">${out[k] ? "safe" : "unsafe"}</td>`).join("") +
      `<td>${names[out[3]]}</td>`;
  } catch (e) {
    row.innerHTML = `<td colspan="4">${e}</td>`;
  }
}

document.querySelectorAll("#scene input, #ego, #proposed").forEach((el) => el.addEventListener("input", verdicts));

// car-following curve

const plot = $("idm").getContext("2d");

function drawCurve() {
  const { width, height } = plot.canvas;
  plot.clearRect(0, 0, width, height);
  const maxGap = 150, lo = -8, hi = 2.5;
  const x = (g) => 40 + ((width - 50) * g) / maxGap;
  const y = (a) => 10 + ((height - 40) * (hi - a)) / (hi - lo);
  plot.strokeStyle = "#ccc";
  plot.fillStyle = "#555";
  for (let a = lo; a <= hi; a += 2) {
    plot.beginPath();
    plot.moveTo(x(0), y(a));
    plot.lineTo(x(maxGap), y(a));
    plot.stroke();
    plot.fillText(String(a), 10, y(a) + 4);
  }
  for (let g = 0; g <= maxGap; g += 25) plot.fillText(`${g} m`, x(g) - 8, height - 12);
  plot.strokeStyle = "#d22";
  plot.beginPath();
  plot.moveTo(x(18.5), y(lo));
  plot.lineTo(x(18.5), y(hi));
  plot.stroke();
  const gaps = new Float64Array(300).map((_, k) => 0.5 + (k * (maxGap - 0.5)) / 299);
  const fv = Number($("fv").value), lv = Number($("lv").value);
  for (const [cav, color] of [[false, "#888"], [true, "#1f6fd1"]]) {
    const acc = idm_curve(fv, lv, cav, gaps);
    plot.strokeStyle = color;
    plot.lineWidth = 2;
    plot.beginPath();
    gaps.forEach((g, k) => {
      const a = Math.max(lo, Math.min(hi, acc[k]));
      if (k === 0) plot.moveTo(x(g), y(a));
      else plot.lineTo(x(g), y(a));
    });
    plot.stroke();
    plot.lineWidth = 1;
  }
}

for (const id of ["fv", "lv"]) $(id).addEventListener("input", drawCurve);

restart();
verdicts();
drawCurve();
requestAnimationFrame(frame);
