/** Global accelerator keys so the protocol runs without touching the pointer.
 *
 * s: toggle straight reject        g: toggle gadolinium
 * m / c / n: cycle motion, contrast, noise grades
 * enter: submit (native form behavior elsewhere)
 * v: review current image   q: adjudication queue   p: progress   a: annotate
 */
export function installKeyboard(target) {
    const handler = (event) => {
        if (event.altKey || event.ctrlKey || event.metaKey)
            return;
        const active = document.activeElement;
        if (active instanceof HTMLInputElement && active.type === "text")
            return;
        const form = target.form();
        switch (event.key) {
            case "s":
                form?.toggleSr();
                break;
            case "g":
                form?.toggleGadolinium();
                break;
            case "m":
                form?.cycle("motion");
                break;
            case "c":
                form?.cycle("contrast");
                break;
            case "n":
                form?.cycle("noise");
                break;
            case "Enter":
                if (form && !(active instanceof HTMLButtonElement)) {
                    event.preventDefault();
                    void form.submit();
                }
                return;
            case "a":
                target.navigate("#annotate");
                break;
            case "q":
                target.navigate("#adjudicate");
                break;
            case "p":
                target.navigate("#progress");
                break;
            default:
                return;
        }
        event.preventDefault();
    };
    document.addEventListener("keydown", handler);
    return handler;
}
