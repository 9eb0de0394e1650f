import init, { compareMechanisms, Trainer } from "./pkg/sdgnn_web.js";

const $ = (id) => document.getElementById(id);
const MAX_EPOCHS = 200;
const COLORS = { attention: "#3b6fb6", collapsed: "#d9822b" };

function showError(e) {
  $("error").textContent = String(e);
}

function renderMechanisms() {
  try {
    const r = JSON.parse(compareMechanisms(+$("mx-seed").value, +$("mx-n").value, +$("mx-scale").value));
    const rows = r.relations.map((rel, i) => `
      <div>${rel}</div>
      <div><div class="bar" style="width:${(100 * r.attention[i]).toFixed(1)}%"></div></div>
      <div><div class="bar gate" style="width:${(100 * r.gating[i]).toFixed(1)}%"></div></div>`);
    $("mx-out").innerHTML = `<div class="bars">
      <b>edge</b><b>attention (sum ${r.attention_sum.toFixed(3)})</b><b>gating (sum ${r.gating_sum.toFixed(3)})</b>
      ${rows.join("")}</div>`;
    $("error").textContent = "";
  } catch (e) {
    showError(e);
  }
}

let runs = null;
let timer = null;

function resetRuns() {
  stop();
  try {
    const n = +$("tr-n").value, lr = +$("tr-lr").value, seed = +$("tr-seed").value;
    runs = {
      attention: { trainer: new Trainer("attention", seed, n, lr), curve: [] },
      collapsed: { trainer: new Trainer("collapsed", seed, n, lr), curve: [] },
    };
    $("tw-pair").max = runs.attention.trainer.pairs() - 1;
    $("error").textContent = "";
  } catch (e) {
    runs = null;
    showError(e);
  }
  drawChart();
  renderTwins();
}

function stop() {
  if (timer !== null) clearTimeout(timer);
  timer = null;
  $("tr-go").textContent = "Train";
}

function tick() {
  try {
    for (const run of Object.values(runs)) run.curve.push(JSON.parse(run.trainer.step()));
  } catch (e) {
    stop();
    showError(e);
    return;
  }
  drawChart();
  const epoch = runs.attention.curve.length;
  if (epoch % 5 === 0) renderTwins();
  if (epoch < MAX_EPOCHS) {
    timer = setTimeout(tick, 0);
  } else {
    stop();
    renderTwins();
  }
}

function toggle() {
  if (!runs) resetRuns();
  if (!runs) return;
  if (timer === null) {
    $("tr-go").textContent = "Pause";
    timer = setTimeout(tick, 0);
  } else {
    stop();
  }
}

function drawChart() {
  const c = $("tr-chart"), g = c.getContext("2d");
  const pad = 36, w = c.width - 2 * pad, h = c.height - 2 * pad;
  g.clearRect(0, 0, c.width, c.height);
  g.strokeStyle = "#999";
  g.fillStyle = "#444";
  g.font = "12px system-ui";
  g.strokeRect(pad, pad, w, h);
  for (const v of [0.5, 1]) {
    const y = pad + h * (1 - v) * 2;
    g.fillText(v.toFixed(1), 4, y + 4);
  }
  g.fillText("test AUROC vs epoch", pad, pad - 10);
  if (!runs) return;
  const status = [];
  for (const [name, run] of Object.entries(runs)) {
    g.strokeStyle = COLORS[name];
    g.beginPath();
    run.curve.forEach((p, i) => {
      const x = pad + (w * (i + 1)) / MAX_EPOCHS;
      const y = pad + h * (1 - Math.max(p.test_auroc - 0.5, 0) * 2);
      i === 0 ? g.moveTo(x, y) : g.lineTo(x, y);
    });
    g.stroke();
    const last = run.curve[run.curve.length - 1];
    if (last) {
      const text = `${name}: epoch ${last.epoch}, loss ${last.loss.toFixed(4)}, AUROC ${last.test_auroc.toFixed(3)}`;
      status.push(`<span style="color:${COLORS[name]}">${text}</span>`);
    }
  }
  $("tr-status").innerHTML = status.join("<br>");
}

function twinTable(t) {
  const top = Math.max(...t.pooling);
  const tokens = t.tokens
    .map((tok, i) => `<span class="tok" style="background:rgba(59,111,182,${(0.6 * t.pooling[i] / top).toFixed(3)})">${tok}</span>`)
    .join("");
  const rows = t.arcs.map((a, i) => `<tr class="${i === t.key_arc ? "key" : ""}">
      <td>${t.tokens[a.head - 1]} &rarr; ${t.tokens[a.dependent - 1]}</td><td>${a.relation}</td>
      ${a.weights.map((w) => `<td>${w.toFixed(3)}</td>`).join("")}</tr>`);
  return `<div><b>${t.label ? "spoiler" : "twin"}</b> ${t.id}, &#375; = ${t.y_hat.toFixed(3)}
    <p>${tokens}</p>
    <table><tr><th>edge</th><th>relation</th><th>layer 1</th><th>layer 2</th></tr>${rows.join("")}</table></div>`;
}

function renderTwins() {
  if (!runs) {
    $("tw-out").innerHTML = "";
    return;
  }
  try {
    const pair = JSON.parse(runs.attention.trainer.twins(+$("tw-pair").value));
    $("tw-out").innerHTML = pair.map(twinTable).join("");
  } catch (e) {
    showError(e);
  }
}

await init();
for (const id of ["mx-n", "mx-scale", "mx-seed"]) $(id).addEventListener("input", renderMechanisms);
$("tr-go").addEventListener("click", toggle);
$("tr-reset").addEventListener("click", resetRuns);
$("tw-pair").addEventListener("input", renderTwins);
renderMechanisms();
resetRuns();
