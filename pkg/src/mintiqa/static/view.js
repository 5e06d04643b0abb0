// Pure view-model helpers, kept free of DOM access so they can be unit
// tested in node. The DOM layer in app.ts only arranges what these return.
export function scoreSliders(item) {
    return item.perspectives.map((persp) => ({
        id: persp,
        label: persp,
        min: 0,
        max: 5,
        step: 0.1,
    }));
}
export function questionGroups(item) {
    return item.questions.map((q) => ({
        id: q.id,
        label: q.text,
        options: q.options.slice(),
    }));
}
export function navState(index, nItems) {
    return {
        prevEnabled: index > 0,
        nextEnabled: index < nItems - 1,
        progress: `${index + 1} / ${nItems}`,
    };
}
