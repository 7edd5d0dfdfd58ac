import init, { meteor_alignment, check_caption, OverfitDemo } from "./pkg/nic_web.js";

const $ = (id) => document.getElementById(id);
const SVG = "http://www.w3.org/2000/svg";

function unwrap(json) {
  const parsed = JSON.parse(json);
  if (parsed.error !== undefined) throw new Error(parsed.error);
  return parsed.ok;
}

function svgEl(name, attrs, text) {
  const el = document.createElementNS(SVG, name);
  for (const [k, v] of Object.entries(attrs)) el.setAttribute(k, v);
  if (text !== undefined) el.textContent = text;
  return el;
}

function fillTable(table, rows) {
  table.replaceChildren(
    ...rows.map((cells) => {
      const tr = document.createElement("tr");
      for (const c of cells) {
        const td = document.createElement("td");
        if (c instanceof Node) td.append(c);
        else td.textContent = c;
        tr.append(td);
      }
      return tr;
    }),
  );
}

function renderAlignment() {
  const svg = $("align-view");
  let view;
  try {
    view = unwrap(meteor_alignment($("hyp").value, $("ref").value, $("lexicon").value));
  } catch (e) {
    svg.replaceChildren(svgEl("text", { x: 4, y: 20 }, e.message));
    return;
  }
  const width = svg.clientWidth || 600;
  const xs = (n) => (i) => ((i + 0.5) * width) / Math.max(n, 1);
  const hx = xs(view.hyp.length);
  const rx = xs(view.reference.length);
  const nodes = [];
  view.pairs.forEach((p) => {
    nodes.push(svgEl("line", { x1: hx(p.hyp), y1: 32, x2: rx(p.reference), y2: 112, class: p.stage, "stroke-width": 2 }));
  });
  view.hyp.forEach((w, i) => nodes.push(svgEl("text", { x: hx(i), y: 22, "text-anchor": "middle" }, w)));
  view.reference.forEach((w, i) => nodes.push(svgEl("text", { x: rx(i), y: 132, "text-anchor": "middle" }, w)));
  svg.replaceChildren(...nodes);

  const f = (x) => x.toFixed(6);
  fillTable($("align-stats"), [
    ["matches", view.m],
    ["chunks", view.chunks],
    ["precision", f(view.precision)],
    ["recall", f(view.recall)],
    ["F", f(view.f_score)],
    ["penalty", f(view.penalty)],
    ["score", f(view.score)],
  ]);
}

function renderCheck() {
  const check = unwrap(check_caption($("caption").value));
  $("normalized").textContent = check.normalized;
  $("tokens").textContent = `${check.tokens.length} (${check.fits ? "kept" : "dropped by the length filter"})`;
  const items = check.findings.map((f) => {
    const li = document.createElement("li");
    li.className = f.hard ? "hard" : "advisory";
    li.textContent = `${f.code} (${f.hard ? "hard" : "advisory"})`;
    return li;
  });
  if (items.length === 0) {
    const li = document.createElement("li");
    li.textContent = "no findings";
    items.push(li);
  }
  $("findings").replaceChildren(...items);
}

function drawCurve(losses) {
  const canvas = $("curve");
  const ctx = canvas.getContext("2d");
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  if (losses.length < 2) return;
  const max = Math.max(...losses);
  ctx.beginPath();
  losses.forEach((l, i) => {
    const x = (i / (losses.length - 1)) * (canvas.width - 8) + 4;
    const y = canvas.height - 4 - (l / max) * (canvas.height - 8);
    if (i === 0) ctx.moveTo(x, y);
    else ctx.lineTo(x, y);
  });
  ctx.strokeStyle = "#57c";
  ctx.stroke();
}

let running = null;

function startTraining() {
  if (running) cancelAnimationFrame(running);
  const demo = new OverfitDemo(Number($("seed").value) >>> 0);
  const losses = [];
  const tick = () => {
    const p = unwrap(demo.step(5));
    losses.push(p.nll_per_token);
    drawCurve(losses);
    $("progress").textContent =
      `epoch ${p.epoch}: loss per token ${p.nll_per_token.toFixed(4)}, ${p.exact}/${p.captions.length} captions reproduced`;
    fillTable(
      $("captions"),
      p.captions.map((c) => {
        const span = document.createElement("span");
        span.className = c.generated === c.reference ? "match" : "miss";
        span.textContent = c.generated || "(empty)";
        return [c.reference, span];
      }),
    );
    if (p.exact < p.captions.length && p.epoch < 400) {
      running = requestAnimationFrame(tick);
    } else {
      running = null;
      demo.free();
    }
  };
  tick();
}

await init();
for (const id of ["hyp", "ref", "lexicon"]) $(id).addEventListener("input", renderAlignment);
$("caption").addEventListener("input", renderCheck);
$("start").addEventListener("click", startTraining);
renderAlignment();
renderCheck();
