import init, { Demo } from "./pkg/adseg_web.js";

const $ = (id) => document.getElementById(id);
const num = (id) => Number($(id).value);
let demo = null;
let clustered = false;

function status(text) {
  $("status").textContent = text;
}

function attempt(f) {
  try {
    f();
  } catch (e) {
    status(`error: ${e}`);
  }
}

function fmt(v, digits = 3) {
  return v === null || v === undefined ? "–" : Number(v).toFixed(digits);
}

function generate() {
  attempt(() => {
    const t = performance.now();
    if (demo) demo.free();
    demo = new Demo(num("users"), num("planted"), num("seed"));
    clustered = false;
    $("cluster").disabled = false;
    $("mine").disabled = true;
    $("clusters").innerHTML = $("index").innerHTML = $("rules").innerHTML = "";
    status(`${demo.users()} users, ${demo.events()} events in ${Math.round(performance.now() - t)} ms`);
  });
}

function cluster() {
  attempt(() => {
    const r = JSON.parse(demo.cluster(num("k"), num("seed"), num("restarts")));
    clustered = true;
    $("mine").disabled = false;
    const rows = r.clusters
      .map((c) => `<tr><td>${c.label}</td><td>${c.size}</td><td>${c.top.map(([name, z]) => `${name} (${fmt(z, 2)})`).join(", ")}</td></tr>`)
      .join("");
    $("clusters").innerHTML =
      `<p>ARI against planted segments ${fmt(r.ari)}; WCSS ${fmt(r.wcss, 1)}, BCSS ${fmt(r.bcss, 1)}, ${r.iterations} iterations</p>` +
      `<table><tr><th>cluster</th><th>users</th><th>strongest categories (z)</th></tr>${rows}</table>`;
    showIndex();
    mine();
  });
}

function showIndex() {
  if (!clustered) return;
  attempt(() => {
    const r = JSON.parse(demo.index($("genre").value, $("stage").value));
    const rows = r.cells
      .map((c) => {
        const v = c.index ?? 0;
        const width = Math.min(200, Math.round(v * 60));
        return `<tr><td>${c.cluster}</td><td>${fmt(c.index)}</td><td>${fmt(c.rate)}</td><td style="text-align:left"><span class="bar ${v < 1 ? "low" : ""}" style="width:${width}px"></span></td></tr>`;
      })
      .join("");
    $("index").innerHTML = `<table><tr><th>cluster</th><th>index</th><th>rate</th><th></th></tr>${rows}</table>`;
  });
}

function mine() {
  if (!clustered) return;
  attempt(() => {
    const r = JSON.parse(demo.rules(num("support"), num("lift"), 20));
    const rows = r.rules
      .map((x) => `<tr><td>${x.antecedent}</td><td>${x.consequent}</td><td>${x.left_support.toExponential(2)}</td><td>${fmt(x.confidence)}</td><td>${fmt(x.lift)}</td><td>${x.matches}</td></tr>`)
      .join("");
    $("rules").innerHTML =
      `<p>${r.total} rules over ${r.baskets} baskets${r.total > r.rules.length ? `, top ${r.rules.length} shown` : ""}</p>` +
      `<table><tr><th>antecedent</th><th>consequent</th><th>left support</th><th>confidence</th><th>lift</th><th>matches</th></tr>${rows}</table>`;
  });
}

await init();
$("generate").onclick = generate;
$("cluster").onclick = cluster;
$("mine").onclick = mine;
$("genre").onchange = showIndex;
$("stage").onchange = showIndex;
generate();
