import init, { decayCurve, defaultLambda, memoryStrength, rankMemories } from "./pkg/journal_wasm.js";

const $ = (id) => document.getElementById(id);

const SAMPLE = [
  { id: "grad", summary: "graduation ceremony rehearsal with my class", emotion: "pride", intensity: 0.8, recall_count: 2, relevance: 0.6, age_days: 3 },
  { id: "party", summary: "planning a graduation party with cousins", emotion: "joy", intensity: 0.6, relevance: 0.4, age_days: 20 },
  { id: "bus", summary: "missed the bus in the rain", emotion: "frustration", intensity: 0.7, age_days: 1 },
  { id: "old", summary: "ceremony at my sister's school years ago", emotion: "joy", intensity: 0.9, recall_count: 9, relevance: 0.9, age_days: 40 },
];

function drawCurve() {
  const canvas = $("curve");
  const ctx = canvas.getContext("2d");
  const lambda = Number($("lambda").value);
  const horizon = Number($("horizon").value);
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  let points;
  try {
    points = JSON.parse(decayCurve(lambda, horizon, horizon / 200));
  } catch (e) {
    $("curve-note").textContent = String(e);
    return;
  }
  const pad = 30, w = canvas.width - 2 * pad, h = canvas.height - 2 * pad;
  const x = (t) => pad + (t / horizon) * w;
  const y = (d) => pad + (1 - d) * h;

  ctx.strokeStyle = "#999";
  ctx.strokeRect(pad, pad, w, h);
  ctx.fillStyle = "#666";
  ctx.font = "11px sans-serif";
  ctx.fillText("1", 8, pad + 4);
  ctx.fillText("0", 8, pad + h + 4);
  ctx.fillText(`${horizon} d`, pad + w - 20, pad + h + 16);

  // six-day boundary between short- and long-term memory
  if (horizon >= 6) {
    ctx.setLineDash([4, 4]);
    ctx.beginPath();
    ctx.moveTo(x(6), pad);
    ctx.lineTo(x(6), pad + h);
    ctx.stroke();
    ctx.setLineDash([]);
    ctx.fillText("6 d", x(6) + 3, pad + 12);
  }

  ctx.strokeStyle = "#2a6fdb";
  ctx.lineWidth = 2;
  ctx.beginPath();
  points.forEach(([t, d], i) => (i ? ctx.lineTo(x(t), y(d)) : ctx.moveTo(x(t), y(d))));
  ctx.stroke();
  ctx.lineWidth = 1;

  const atSix = JSON.parse(decayCurve(lambda, 6, 6))[1][1];
  $("curve-note").textContent = `decay after 6 days: ${atSix.toFixed(4)}`;
}

const FIELDS = [
  ["e", "emotion intensity", 0.8, 0.05],
  ["recall_count", "times recalled", 4, 1],
  ["c", "context relevance", 0.6, 0.05],
  ["age_days", "age (days)", 3, 0.5],
  ["w_e", "weight E", 1, 0.1],
  ["w_r", "weight R", 1, 0.1],
  ["w_c", "weight C", 1, 0.1],
];

function buildStrengthForm() {
  const form = $("strength-form");
  for (const [key, label, value, step] of FIELDS) {
    const row = document.createElement("div");
    row.innerHTML = `<label for="s-${key}">${label}</label><input id="s-${key}" type="number" step="${step}" value="${value}">`;
    form.appendChild(row);
  }
  form.addEventListener("input", updateStrength);
}

function updateStrength() {
  const input = { lambda: Number($("lambda").value) };
  for (const [key] of FIELDS) input[key] = Number($(`s-${key}`).value);
  try {
    $("strength-out").textContent = memoryStrength(JSON.stringify(input)).toFixed(4);
    $("strength-out").className = "out";
  } catch (e) {
    $("strength-out").textContent = String(e);
    $("strength-out").className = "err";
  }
}

function updateRanking() {
  const body = $("ranked").querySelector("tbody");
  body.innerHTML = "";
  $("rank-err").textContent = "";
  try {
    const rows = JSON.parse(rankMemories($("memories").value, $("query").value, Number($("k").value)));
    for (const r of rows) {
      const tr = document.createElement("tr");
      for (const v of [r.id, r.summary, r.similarity.toFixed(3), r.strength.toFixed(3), r.combined.toFixed(3), r.term]) {
        const td = document.createElement("td");
        td.textContent = v;
        tr.appendChild(td);
      }
      body.appendChild(tr);
    }
    if (!rows.length) $("rank-err").textContent = "nothing related enough to cite";
  } catch (e) {
    $("rank-err").textContent = String(e);
  }
}

await init();
$("lambda").value = defaultLambda().toFixed(4);
$("memories").value = JSON.stringify(SAMPLE, null, 2);
buildStrengthForm();
for (const id of ["lambda", "horizon"]) $(id).addEventListener("input", () => { drawCurve(); updateStrength(); });
for (const id of ["query", "k", "memories"]) $(id).addEventListener("input", updateRanking);
drawCurve();
updateStrength();
updateRanking();
