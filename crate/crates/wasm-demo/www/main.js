import init, { coverage, shield, episode } from "./pkg/dynshield_wasm_demo.js";

const ACTIONS = ["E", "S", "W", "N"];
const $ = (id) => document.getElementById(id);
const num = (id) => Number($(id).value);

function parse(text, out) {
  const v = JSON.parse(text);
  if (v.error) {
    out.textContent = "error: " + v.error;
    return null;
  }
  return v;
}

function gridPainter(canvas, width, height) {
  const ctx = canvas.getContext("2d");
  const size = Math.min(canvas.width / width, canvas.height / height);
  const px = (x) => (x + 0.5) * size;
  const py = (y) => canvas.height - (y + 0.5) * size;
  return {
    ctx,
    size,
    px,
    py,
    clear() {
      ctx.clearRect(0, 0, canvas.width, canvas.height);
      ctx.strokeStyle = "#eee";
      for (let i = 0; i <= width; i++) {
        ctx.beginPath();
        ctx.moveTo(i * size, 0);
        ctx.lineTo(i * size, canvas.height);
        ctx.stroke();
      }
      for (let j = 0; j <= height; j++) {
        ctx.beginPath();
        ctx.moveTo(0, canvas.height - j * size);
        ctx.lineTo(canvas.width, canvas.height - j * size);
        ctx.stroke();
      }
    },
    cell([x, y], color) {
      ctx.fillStyle = color;
      ctx.fillRect(x * size, canvas.height - (y + 1) * size, size, size);
    },
    dot(x, y, r, color) {
      ctx.fillStyle = color;
      ctx.beginPath();
      ctx.arc(px(x), py(y), r, 0, 2 * Math.PI);
      ctx.fill();
    },
    ring(x, y, r, color) {
      ctx.strokeStyle = color;
      ctx.beginPath();
      ctx.arc(px(x), py(y), Math.max(r * size, 1), 0, 2 * Math.PI);
      ctx.stroke();
    },
    toCell(ev) {
      const rect = canvas.getBoundingClientRect();
      const x = Math.floor((ev.clientX - rect.left) / size);
      const y = Math.floor((canvas.height - (ev.clientY - rect.top)) / size);
      return [x, y];
    },
  };
}

let lastCoverage = null;

function drawCoverage() {
  const canvas = $("cov-canvas");
  const ctx = canvas.getContext("2d");
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  if (!lastCoverage) return;
  const tau = num("cov-tau");
  const pts = lastCoverage.trace.filter((s) => s.tau === tau);
  if (pts.length === 0) return;
  const top = Math.max(...pts.map((s) => Math.max(s.beta, s.radius))) * 1.05;
  const t0 = pts[0].t;
  const t1 = pts[pts.length - 1].t;
  const X = (t) => ((t - t0) / Math.max(t1 - t0, 1)) * canvas.width;
  const Y = (v) => canvas.height - (v / top) * canvas.height;
  for (const s of pts) {
    ctx.fillStyle = s.beta > s.radius ? "#d62728" : "#999";
    ctx.fillRect(X(s.t), Y(s.beta), 2, 2);
  }
  ctx.strokeStyle = "#1f77b4";
  ctx.beginPath();
  pts.forEach((s, i) => (i ? ctx.lineTo(X(s.t), Y(s.radius)) : ctx.moveTo(X(s.t), Y(s.radius))));
  ctx.stroke();
}

function runCoverage() {
  const out = $("cov-out");
  const v = parse(coverage(num("cov-steps"), num("cov-sigma"), num("cov-delta"), num("cov-alpha"), 0n), out);
  if (!v) return;
  lastCoverage = v;
  out.textContent = v.per_tau
    .map((c) => `tau ${c.tau}: ${c.violations}/${c.scored} = ${c.violation_rate.toFixed(4)}\n  mean radius ${c.mean_radius.toFixed(3)}`)
    .join("\n");
  drawCoverage();
}

const shieldState = { robot: [3, 3], agents: [[6.4, 4.2], [3.0, 7.5]] };

function runShield() {
  const out = $("sh-out");
  const [x, y] = shieldState.robot;
  const v = parse(shield(JSON.stringify(shieldState.agents), x, y, num("sh-eps"), $("sh-radii").value), out);
  if (!v) return;
  const tau = num("sh-tau");
  const g = gridPainter($("sh-canvas"), v.width, v.height);
  g.clear();
  (v.winning[tau - 1] || []).forEach((c) => g.cell(c, "#cfe8cf"));
  (v.unsafe[tau - 1] || []).forEach((c) => g.cell(c, "#f3b3b3"));
  g.cell([v.goal.x, v.goal.y], "#ffd966");
  shieldState.agents.forEach(([ax, ay]) => g.dot(ax, ay, 5, "#d62728"));
  g.dot(x, y, 6, "#1f77b4");
  out.textContent =
    `robot (${x}, ${y})\nallowed: ${v.root_actions.map((a) => ACTIONS[a]).join(" ") || "none"}\n` +
    `tree nodes: ${v.nodes}\n` +
    v.unsafe.map((f, i) => `tau ${i + 1}: ${f.length} unsafe, ${v.winning[i].length} winning cells`).join("\n");
}

function clickShield(ev) {
  const g = gridPainter($("sh-canvas"), 20, 20);
  const [x, y] = g.toCell(ev);
  if (ev.shiftKey) {
    const i = shieldState.agents.findIndex(([ax, ay]) => Math.round(ax) === x && Math.round(ay) === y);
    if (i >= 0) shieldState.agents.splice(i, 1);
    else shieldState.agents.push([x, y]);
  } else {
    shieldState.robot = [x, y];
  }
  runShield();
}

let lastEpisode = null;

function drawFrame() {
  if (!lastEpisode) return;
  const v = lastEpisode;
  const f = v.frames[num("ep-frame")];
  if (!f) return;
  const g = gridPainter($("ep-canvas"), v.width, v.height);
  g.clear();
  (f.unsafe_cells[0] || []).forEach((c) => g.cell(c, "#f3b3b3"));
  f.support.forEach((c) => g.cell(c, "#c6dbef"));
  g.cell([v.goal.x, v.goal.y], "#ffd966");
  f.predictions.filter((p) => p.tau === 1).forEach((p) => g.ring(p.x, p.y, p.radius, "#ff7f0e"));
  f.agents.forEach(([, ax, ay]) => g.dot(ax, ay, 5, "#d62728"));
  if (f.robot) g.dot(f.robot[0], f.robot[1], 6, "#1f77b4");
  $("ep-out").textContent =
    `steps ${v.steps}, success ${v.success}\nsafety ${v.safety_rate.toFixed(3)}, collisions ${v.collisions}, deadlocks ${v.deadlocks}\n\n` +
    `t = ${f.t}\naction ${f.action === null ? "-" : ACTIONS[f.action]}\n` +
    `allowed ${f.allowed ? f.allowed.map((a) => ACTIONS[a]).join(" ") : "all"}`;
}

function runEpisode() {
  const out = $("ep-out");
  out.textContent = "running...";
  setTimeout(() => {
    const v = parse(episode($("ep-method").value, num("ep-agents"), BigInt(num("ep-seed")), num("ep-sims")), out);
    if (!v) return;
    lastEpisode = v;
    $("ep-frame").max = Math.max(v.frames.length - 1, 0);
    $("ep-frame").value = 0;
    drawFrame();
  }, 0);
}

await init();
$("cov-run").onclick = runCoverage;
$("cov-tau").onchange = drawCoverage;
$("sh-canvas").onclick = clickShield;
["sh-eps", "sh-radii", "sh-tau"].forEach((id) => ($(id).onchange = runShield));
$("ep-run").onclick = runEpisode;
$("ep-frame").oninput = drawFrame;
runCoverage();
runShield();
