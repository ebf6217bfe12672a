/** DOM views: annotate, review, adjudication queue, progress.
 *
 * Views render into a root element and use only native focusable controls,
 * so the whole flow is operable from the keyboard alone.
 */
import { ApiError } from "./api.js";
import { buildPayload, cycleGrade, formFromAnnotation, freshForm, gradesDisabled, impliedTier, setGrade, toggleGadolinium, toggleSr, } from "./form.js";
const PLANES = ["axial", "coronal", "sagittal"];
const GRADE_NAMES = ["motion", "contrast", "noise"];
function el(tag, attrs = {}, ...children) {
    const node = document.createElement(tag);
    for (const [key, value] of Object.entries(attrs)) {
        node.setAttribute(key, value);
    }
    node.append(...children);
    return node;
}
export function banner(kind, text) {
    return el("div", { class: `banner banner-${kind}`, role: "status" }, text);
}
function sliceRow(api, imageId) {
    const row = el("div", { class: "slices" });
    for (const plane of PLANES) {
        row.append(el("figure", { class: "slice" }, el("img", {
            src: api.sliceUrl(imageId, plane),
            alt: `${plane} central slice of ${imageId}`,
            "data-plane": plane,
        }), el("figcaption", {}, plane)));
    }
    return row;
}
function annotationSummary(record) {
    if (record.straight_reject) {
        return el("p", { class: "summary" }, `straight reject (rater ${record.rater_id})`);
    }
    const g = record.grades;
    return el("p", { class: "summary" }, `rater ${record.rater_id}: gadolinium ${record.gadolinium ? "yes" : "no"}, ` +
        `motion ${g.motion}, contrast ${g.contrast}, noise ${g.noise}`);
}
/** The annotation form plus slice display for one image. */
export class AnnotationForm {
    constructor(ctx, imageId, existing, onSubmitted) {
        this.ctx = ctx;
        this.onSubmitted = onSubmitted;
        this.state = existing ? formFromAnnotation(existing) : freshForm(imageId);
        this.container = el("form", { class: "annotation-form", "aria-label": "annotation form" });
        this.container.addEventListener("submit", (event) => {
            event.preventDefault();
            void this.submit();
        });
    }
    get element() {
        this.render();
        return this.container;
    }
    toggleSr() {
        this.state = toggleSr(this.state);
        this.render();
    }
    toggleGadolinium() {
        this.state = toggleGadolinium(this.state);
        this.render();
    }
    cycle(which) {
        this.state = cycleGrade(this.state, which);
        this.render();
    }
    async submit() {
        const payload = buildPayload(this.state, this.ctx.raterId);
        try {
            const result = await this.ctx.api.submitAnnotation(this.state.imageId, payload);
            this.state = { ...this.state, dirty: false };
            this.onSubmitted(result.version);
        }
        catch (error) {
            const message = error instanceof ApiError ? error.message : String(error);
            this.container.prepend(banner("error", `submission failed: ${message}`));
        }
    }
    render() {
        const disabled = gradesDisabled(this.state);
        this.container.replaceChildren();
        const srBox = el("input", { type: "checkbox", id: "sr-toggle", "data-key": "s" });
        srBox.checked = this.state.straightReject;
        srBox.addEventListener("change", () => this.toggleSr());
        this.container.append(el("div", { class: "control" }, srBox, el("label", { for: "sr-toggle" }, "straight reject [s]")));
        const gadoBox = el("input", { type: "checkbox", id: "gado-toggle", "data-key": "g" });
        gadoBox.checked = this.state.gadolinium;
        gadoBox.disabled = disabled;
        gadoBox.addEventListener("change", () => this.toggleGadolinium());
        this.container.append(el("div", { class: "control" }, gadoBox, el("label", { for: "gado-toggle" }, "gadolinium [g]")));
        for (const which of GRADE_NAMES) {
            const select = el("select", { id: `${which}-grade` });
            for (const grade of [0, 1, 2]) {
                const option = el("option", { value: String(grade) }, String(grade));
                option.selected = this.state[which] === grade;
                select.append(option);
            }
            select.disabled = disabled;
            select.addEventListener("change", () => {
                this.state = setGrade(this.state, which, Number(select.value));
                this.render();
            });
            this.container.append(el("div", { class: "control" }, el("label", { for: `${which}-grade` }, `${which} [${which[0]}]`), select));
        }
        const tier = impliedTier(this.state);
        this.container.append(el("p", { class: "tier-preview", id: "tier-preview" }, tier === null ? "tier: n/a (straight reject)" : `tier: ${tier}`));
        this.container.append(el("button", { type: "submit", id: "submit-annotation" }, "submit [enter]"));
    }
}
export async function renderAnnotate(ctx) {
    const next = await ctx.api.nextImage(ctx.raterId);
    ctx.root.replaceChildren();
    if (next.exhausted || !next.image_id) {
        ctx.root.append(banner("success", "all images annotated - nothing left in your queue"));
        return null;
    }
    return mountForm(ctx, next.image_id, null, "annotate");
}
export async function renderReview(ctx, imageId) {
    let detail;
    try {
        detail = await ctx.api.getAnnotations(imageId);
    }
    catch (error) {
        ctx.root.replaceChildren(banner("error", error instanceof ApiError && error.status === 404
            ? `unknown image ${imageId}`
            : `failed to load ${imageId}: ${String(error)}`));
        return null;
    }
    const mine = detail.current[ctx.raterId] ?? null;
    const notice = mine
        ? null
        : banner("info", `not annotated yet: ${imageId} has no annotation from you`);
    return mountForm(ctx, imageId, mine, "review", notice);
}
function mountForm(ctx, imageId, existing, mode, notice = null) {
    const header = el("h2", {}, `${mode === "annotate" ? "Annotate" : "Review"} ${imageId}`);
    const status = el("div", { id: "submit-status" });
    const form = new AnnotationForm(ctx, imageId, existing, (version) => {
        status.replaceChildren(banner("success", `stored version ${version} of ${imageId}`));
        if (mode === "annotate") {
            void renderAnnotate(ctx).then((next) => {
                if (next)
                    currentForm = next;
            });
        }
    });
    const children = [header, sliceRow(ctx.api, imageId), form.element, status];
    if (notice)
        children.splice(1, 0, notice);
    ctx.root.replaceChildren(...children);
    currentForm = form;
    return form;
}
export async function renderAdjudication(ctx) {
    const progress = await ctx.api.progress();
    ctx.root.replaceChildren(el("h2", {}, "SR adjudication queue"));
    if (progress.adjudication_queue.length === 0) {
        ctx.root.append(banner("info", "no SR disagreements awaiting adjudication"));
        return;
    }
    for (const imageId of progress.adjudication_queue) {
        const detail = await ctx.api.getAnnotations(imageId);
        const card = el("section", { class: "adjudication-card", "data-image": imageId });
        card.append(el("h3", {}, imageId), sliceRow(ctx.api, imageId));
        for (const record of Object.values(detail.current)) {
            card.append(annotationSummary(record));
        }
        const keep = el("button", { "data-action": "keep-sr" }, "keep straight reject");
        const drop = el("button", { "data-action": "drop-sr" }, "use graded annotation");
        for (const [button, keepSr] of [
            [keep, true],
            [drop, false],
        ]) {
            button.addEventListener("click", () => {
                void ctx.api
                    .resolveSr(imageId, keepSr)
                    .then(() => renderAdjudication(ctx))
                    .catch((error) => card.prepend(banner("error", `resolution failed: ${String(error)}`)));
            });
        }
        card.append(el("div", { class: "actions" }, keep, drop));
        ctx.root.append(card);
    }
}
export async function renderProgress(ctx) {
    const summary = await ctx.api.progress();
    ctx.root.replaceChildren(el("h2", {}, "Progress"));
    const list = el("ul", { class: "progress" });
    for (const [rater, counts] of Object.entries(summary.per_rater)) {
        list.append(el("li", {}, `${rater}: ${counts.done} done, ${counts.remaining} remaining`));
    }
    list.append(el("li", {}, `adjudication queue: ${summary.adjudication_queue.length}`));
    for (const [key, count] of Object.entries(summary.consensus_distribution)) {
        list.append(el("li", {}, `consensus ${key}: ${count}`));
    }
    ctx.root.append(list);
}
/** The form currently on screen, for keyboard dispatch. */
export let currentForm = null;
