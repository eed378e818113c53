import init, { bic_values, run_demo, select_csv } from "./pkg/mlmbic_wasm.js";

const $ = (id) => document.getElementById(id);
const fmt = (x, d = 1) => (x === null || x === undefined ? "" : Number(x).toFixed(d));

function table(head, rows) {
  const th = head.map((h) => `<th>${h}</th>`).join("");
  const tr = rows.map((r) => `<tr>${r.map((c) => `<td>${c}</td>`).join("")}</tr>`).join("");
  return `<table><tr>${th}</tr>${tr}</table>`;
}

function guard(out, f) {
  try {
    f();
  } catch (e) {
    out.innerHTML = `<p class="err">${e}</p>`;
  }
}

function termSets(text) {
  return text
    .split("\n")
    .map((l) => l.trim())
    .filter((l) => l.length > 0)
    .map((l) => {
      const i = l.indexOf(":");
      if (i < 0) throw new Error(`expected "name: terms", got "${l}"`);
      return { name: l.slice(0, i).trim(), terms: l.slice(i + 1).trim() };
    });
}

await init();

$("bic-go").onclick = () =>
  guard($("bic-out"), () => {
    const v = JSON.parse(
      bic_values(+$("dev").value, +$("k1").value, +$("k2").value, +$("nobs").value, +$("nclus").value),
    );
    $("bic-out").innerHTML = table(["BIC_E", "BIC_N", "BIC_J"], [[fmt(v.bic_e), fmt(v.bic_n), fmt(v.bic_j)]]);
  });

$("model").onchange = () => ($("corr").disabled = $("model").value === "B");

$("demo-go").onclick = () =>
  guard($("demo-out"), () => {
    const model = $("model").value;
    const cfg = { model, sigma2_levels: [+$("sigma2").value], seed: +$("seed").value };
    if (model === "A") cfg.correlations = [+$("corr").value];
    const out = JSON.parse(run_demo(JSON.stringify(cfg)));
    const rows = out.cells.flatMap((c) =>
      ["fixed", "random"].map((b) => [
        b,
        fmt(c[b].coef_logn, 3),
        fmt(c.expected[`${b}_logn`], 3),
        fmt(c[b].coef_logJ, 3),
        fmt(c.expected[`${b}_logJ`], 3),
      ]),
    );
    $("demo-out").innerHTML = table(["block", "log n", "expected", "log J", "expected"], rows);
    $("figure").innerHTML = out.svg;
  });

$("file").onchange = async (ev) => {
  const f = ev.target.files[0];
  if (f) $("csv").value = await f.text();
};

$("select-go").onclick = () =>
  guard($("select-out"), () => {
    const report = JSON.parse(
      select_csv(
        $("csv").value,
        $("group").value,
        $("response").value,
        JSON.stringify(termSets($("fixed").value)),
        JSON.stringify(termSets($("random").value)),
      ),
    );
    const rows = report.candidates.map((c) => [
      c.label,
      fmt(c.deviance),
      c.K1 ?? "",
      c.K2 ?? "",
      `${fmt(c.bic_e)} (${c.rank_e ?? "-"})`,
      `${fmt(c.bic_n)} (${c.rank_n ?? "-"})`,
      `${fmt(c.bic_j)} (${c.rank_j ?? "-"})`,
      c.error ?? c.warnings.join("; "),
    ]);
    $("select-out").innerHTML =
      `<p>N = ${report.n_obs}, J = ${report.n_clusters}</p>` +
      table(["model", "deviance", "K1", "K2", "BIC_E", "BIC_N", "BIC_J", "notes"], rows);
  });
