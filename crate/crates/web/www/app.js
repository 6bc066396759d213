import init, { parameters, generate, simulate, calibrate } from "./pkg/bubsim_web.js";

const $ = (id) => document.getElementById(id);
let params = [];

function showError(e) {
  $("error").textContent = e ? String(e.message || e) : "";
}

function seed() {
  return Number($("seed").value) >>> 0;
}

// Line chart of several series on one canvas; `band` is an optional [lo, hi] pair.
function plot(canvas, series, band) {
  const ctx = canvas.getContext("2d");
  const w = canvas.width, h = canvas.height, pad = 30;
  ctx.clearRect(0, 0, w, h);
  const all = series.flatMap((s) => s.values).concat(band ? band[1] : []);
  const ymax = Math.max(1e-9, ...all);
  const n = series[0].values.length;
  const X = (i) => pad + (i / Math.max(1, n - 1)) * (w - 2 * pad);
  const Y = (v) => h - pad - (v / ymax) * (h - 2 * pad);
  ctx.strokeStyle = "#bbb";
  ctx.strokeRect(pad, pad, w - 2 * pad, h - 2 * pad);
  ctx.fillStyle = "#555";
  ctx.fillText(ymax.toFixed(1), 2, pad + 4);
  ctx.fillText("0", 2, h - pad);
  ctx.fillText(`day ${n - 1}`, w - pad - 30, h - pad + 14);
  if (band) {
    ctx.fillStyle = "rgba(120,170,220,0.35)";
    ctx.beginPath();
    band[1].forEach((v, i) => (i ? ctx.lineTo(X(i), Y(v)) : ctx.moveTo(X(i), Y(v))));
    for (let i = n - 1; i >= 0; i--) ctx.lineTo(X(i), Y(band[0][i]));
    ctx.fill();
  }
  for (const s of series) {
    ctx.strokeStyle = s.color;
    ctx.lineWidth = 1.5;
    ctx.beginPath();
    s.values.forEach((v, i) => (i ? ctx.lineTo(X(i), Y(v)) : ctx.moveTo(X(i), Y(v))));
    ctx.stroke();
  }
}

function heat(t) {
  // dark blue (low error) to yellow (high error)
  const r = Math.round(30 + 225 * t), g = Math.round(40 + 190 * t), b = Math.round(120 - 90 * t);
  return `rgb(${r},${g},${b})`;
}

function drawContour(canvas, result) {
  const ctx = canvas.getContext("2d");
  const w = canvas.width, h = canvas.height, pad = 40;
  ctx.clearRect(0, 0, w, h);
  const { x, y, values } = result.contour;
  const flat = values.flat();
  const lo = Math.min(...flat), hi = Math.max(...flat);
  const cw = (w - 2 * pad) / x.length, ch = (h - 2 * pad) / y.length;
  values.forEach((row, j) =>
    row.forEach((v, i) => {
      ctx.fillStyle = heat((v - lo) / Math.max(1e-12, hi - lo));
      ctx.fillRect(pad + i * cw, h - pad - (j + 1) * ch, cw + 0.5, ch + 0.5);
    })
  );
  const [x0, x1, y0, y1] = [x[0], x[x.length - 1], y[0], y[y.length - 1]];
  const PX = (v) => pad + ((v - x0) / (x1 - x0 || 1)) * (w - 2 * pad);
  const PY = (v) => h - pad - ((v - y0) / (y1 - y0 || 1)) * (h - 2 * pad);
  ctx.fillStyle = "#fff";
  for (const [px, py] of result.points) {
    ctx.beginPath();
    ctx.arc(PX(px), PY(py), 2.5, 0, 2 * Math.PI);
    ctx.fill();
  }
  const b = result.best;
  ctx.strokeStyle = "#e22";
  ctx.lineWidth = 2;
  ctx.beginPath();
  ctx.arc(PX(b[result.var_x]), PY(b[result.var_y]), 6, 0, 2 * Math.PI);
  ctx.stroke();
  ctx.fillStyle = "#333";
  ctx.fillText(result.var_x, w / 2 - 50, h - 10);
  ctx.save();
  ctx.translate(12, h / 2 + 50);
  ctx.rotate(-Math.PI / 2);
  ctx.fillText(result.var_y, 0, 0);
  ctx.restore();
  ctx.fillText(x0.toFixed(2), pad, h - pad + 12);
  ctx.fillText(x1.toFixed(2), w - pad - 20, h - pad + 12);
}

function buildParamInputs() {
  const box = $("params");
  box.innerHTML = "";
  for (const p of params) {
    const label = document.createElement("label");
    label.textContent = p.name;
    const input = document.createElement("input");
    Object.assign(input, { type: "number", value: p.default, min: p.lower, max: p.upper, step: "any" });
    input.dataset.name = p.name;
    label.appendChild(input);
    box.appendChild(label);
  }
  for (const id of ["var-x", "var-y"]) {
    $(id).innerHTML = params.map((p) => `<option>${p.name}</option>`).join("");
  }
  $("var-x").value = "DaysInfectedToHospital";
  $("var-y").value = "GammaShapeParameter";
}

function currentParams() {
  const out = {};
  for (const input of $("params").querySelectorAll("input")) out[input.dataset.name] = Number(input.value);
  return JSON.stringify(out);
}

function runGenerate() {
  showError();
  const g = JSON.parse(generate(seed()));
  plot($("cases"), [
    { values: g.cases, color: "#888" },
    { values: g.truth.icu, color: "#1b6" },
  ]);
}

function runSimulate() {
  showError();
  const r = JSON.parse(simulate(seed(), currentParams()));
  const k = $("resource").value;
  plot($("demand"), [
    { values: r.truth[k], color: "#1b6" },
    { values: r.median[k], color: "#25c" },
  ], [r.min[k], r.max[k]]);
  $("sim-out").textContent = `epsilon ${r.epsilon.toFixed(3)}`;
}

function runCalibrate() {
  showError();
  $("cal-out").textContent = "running...";
  // let the status text paint before the synchronous run
  setTimeout(() => {
    try {
      const r = JSON.parse(calibrate(seed(), $("var-x").value, $("var-y").value, Number($("budget").value), 30));
      drawContour($("contour"), r);
      $("cal-out").textContent =
        `default ${r.default_epsilon.toFixed(3)} -> best ${r.best_epsilon.toFixed(3)} at ` +
        `${r.var_x}=${r.best[r.var_x].toFixed(3)}, ${r.var_y}=${r.best[r.var_y].toFixed(3)}`;
      for (const input of $("params").querySelectorAll("input")) {
        if (input.dataset.name in r.best) input.value = r.best[input.dataset.name];
      }
      runSimulate();
    } catch (e) {
      $("cal-out").textContent = "";
      showError(e);
    }
  }, 20);
}

function guard(f) {
  return () => {
    try {
      f();
    } catch (e) {
      showError(e);
    }
  };
}

await init();
params = JSON.parse(parameters());
buildParamInputs();
$("generate").onclick = guard(runGenerate);
$("simulate").onclick = guard(runSimulate);
$("resource").onchange = guard(runSimulate);
$("reset").onclick = guard(() => {
  buildParamInputs();
  runSimulate();
});
$("calibrate").onclick = runCalibrate;
guard(() => {
  runGenerate();
  runSimulate();
})();
