import init, { renderConditions, pitchTrack, alignCondition } from "./pkg/prosogap_web.js";

const $ = (id) => document.getElementById(id);
const params = () => [$("sentence").value, Number($("seed").value) >>> 0];

function guard(fn) {
  return () => {
    $("error").textContent = "";
    try {
      fn();
    } catch (e) {
      $("error").textContent = String(e.message ?? e);
    }
  };
}

const fmt = (x, d = 3) => (x == null ? "–" : x.toFixed(d));

function drawBars(conditions) {
  const c = $("bars"), g = c.getContext("2d");
  g.clearRect(0, 0, c.width, c.height);
  const rows = conditions.filter((r) => r.key !== "full");
  const max = Math.max(...rows.map((r) => r.duration_mae ?? 0), 1e-9);
  const w = c.width / rows.length;
  rows.forEach((r, i) => {
    const h = ((r.duration_mae ?? 0) / max) * (c.height - 30);
    g.fillStyle = { k0: "#c44", gt: "#4a4", pred: "#48c", rand: "#c90" }[r.kind] ?? "#888";
    g.fillRect(i * w + 4, c.height - 20 - h, w - 8, h);
    g.fillStyle = "#222";
    g.fillText(r.key, i * w + 6, c.height - 6);
  });
  g.fillText("duration MAE (frames)", 6, 12);
}

function render() {
  const [sentence, seed] = params();
  const v = JSON.parse(renderConditions(sentence, seed, Number($("samples").value)));
  const head = "<tr><th>condition</th><th>duration MAE</th><th>energy MAE</th><th>pitch MAE (cents)</th><th>audio (s)</th></tr>";
  $("table").innerHTML = head + v.conditions
    .map((r) => `<tr><td>${r.key}</td><td>${fmt(r.duration_mae)}</td><td>${fmt(r.energy_mae, 4)}</td><td>${fmt(r.pitch_mae_cents, 1)}</td><td>${fmt(r.audio_seconds, 2)}</td></tr>`)
    .join("");
  drawBars(v.conditions);
  const keep = $("key").value;
  $("key").innerHTML = v.conditions.filter((r) => r.key !== "full").map((r) => `<option>${r.key}</option>`).join("");
  if (keep) $("key").value = keep;
}

function axes(g, c, label) {
  g.clearRect(0, 0, c.width, c.height);
  g.strokeStyle = "#aaa";
  g.strokeRect(40, 10, c.width - 50, c.height - 40);
  g.fillStyle = "#222";
  g.fillText(label, 44, c.height - 12);
}

function pitch() {
  const [sentence, seed] = params();
  const v = JSON.parse(pitchTrack(sentence, $("key").value, seed));
  const c = $("plot"), g = c.getContext("2d");
  axes(g, c, `time (hop ${(v.hop_seconds * 1000).toFixed(1)} ms) · f0 75–600 Hz`);
  const n = Math.max(...v.tracks.map((t) => t.f0_hz.length));
  const x = (i) => 40 + (i / Math.max(n - 1, 1)) * (c.width - 50);
  const y = (f) => 10 + (1 - (Math.log(f) - Math.log(75)) / (Math.log(600) - Math.log(75))) * (c.height - 40);
  const colors = ["#c44", "#222"];
  v.tracks.forEach((t, k) => {
    g.fillStyle = colors[k];
    t.f0_hz.forEach((f, i) => f != null && g.fillRect(x(i) - 1.5, y(f) - 1.5, 3, 3));
  });
  $("legend").innerHTML = v.tracks.map((t, k) => `<span style="color:${colors[k]}">■ ${t.key}</span>`).join("");
}

function align() {
  const [sentence, seed] = params();
  const v = JSON.parse(alignCondition(sentence, $("key").value, seed));
  const c = $("plot"), g = c.getContext("2d");
  axes(g, c, `${$("key").value} frames (x) vs full frames (y) · cost ${fmt(v.cost, 2)} · pitch MAE ${fmt(v.pitch_mae_cents, 1)} cents`);
  const x = (i) => 40 + (i / Math.max(v.test_frames - 1, 1)) * (c.width - 50);
  const y = (j) => c.height - 30 - (j / Math.max(v.reference_frames - 1, 1)) * (c.height - 40);
  g.strokeStyle = "#ddd";
  g.beginPath(); g.moveTo(x(0), y(0)); g.lineTo(x(v.test_frames - 1), y(v.reference_frames - 1)); g.stroke();
  g.strokeStyle = "#48c";
  g.lineWidth = 2;
  g.beginPath();
  v.path.forEach(([i, j], k) => (k ? g.lineTo(x(i), y(j)) : g.moveTo(x(i), y(j))));
  g.stroke();
  g.lineWidth = 1;
  $("legend").innerHTML = `<span style="color:#48c">■ warping path</span><span style="color:#aaa">■ diagonal</span>`;
}

await init();
$("render").onclick = guard(render);
$("pitch").onclick = guard(pitch);
$("align").onclick = guard(align);
guard(render)();
