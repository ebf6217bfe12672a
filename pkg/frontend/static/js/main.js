/** Entry point: hash routing, rater session, keyboard wiring. */
import { AnnotationApi } from "./api.js";
import { installKeyboard } from "./keyboard.js";
import { banner, currentForm, renderAdjudication, renderAnnotate, renderProgress, renderReview, } from "./views.js";
function raterFromLocation() {
    const params = new URLSearchParams(window.location.search);
    const fromQuery = params.get("rater");
    if (fromQuery) {
        window.localStorage.setItem("t1qc-rater", fromQuery);
        return fromQuery;
    }
    const stored = window.localStorage.getItem("t1qc-rater");
    if (stored)
        return stored;
    const entered = window.prompt("rater id:") ?? "rater1";
    window.localStorage.setItem("t1qc-rater", entered);
    return entered;
}
export function route(ctx, hash) {
    if (hash.startsWith("#review/")) {
        return renderReview(ctx, decodeURIComponent(hash.slice("#review/".length)));
    }
    switch (hash) {
        case "#adjudicate":
            return renderAdjudication(ctx);
        case "#progress":
            return renderProgress(ctx);
        case "#annotate":
        case "":
        default:
            return renderAnnotate(ctx);
    }
}
export function start() {
    const root = document.getElementById("app");
    if (!root)
        throw new Error("missing #app container");
    const raterId = raterFromLocation();
    const ctx = {
        api: new AnnotationApi(""),
        raterId,
        root,
        navigate: (hash) => {
            window.location.hash = hash;
        },
    };
    const header = document.getElementById("rater-label");
    if (header)
        header.textContent = `rater: ${raterId}`;
    installKeyboard({ form: () => currentForm, navigate: ctx.navigate });
    window.addEventListener("hashchange", () => {
        void route(ctx, window.location.hash).catch((error) => root.replaceChildren(banner("error", String(error))));
    });
    void route(ctx, window.location.hash).catch((error) => root.replaceChildren(banner("error", String(error))));
}
start();
