/** Client-side mirror of the server's selection state.
 *
 * The set of selected cells always comes from a selection response;
 * local gestures never update it directly. That keeps the highlight in
 * lockstep with what differential expression will actually run on.
 */

import { ApiClient } from "./api.js";
import { SelectionResponse } from "./types.js";
import { SelectionBody } from "./tools.js";

export class SelectionController {
    private selected: Set<number> = new Set();
    onChange?: (selected: ReadonlySet<number>) => void;

    constructor(
        private api: ApiClient,
        private sessionId: string,
    ) {}

    /** Indices currently highlighted, exactly as the server reported them. */
    get indices(): ReadonlySet<number> {
        return this.selected;
    }

    get count(): number {
        return this.selected.size;
    }

    async apply(body: SelectionBody): Promise<SelectionResponse> {
        const resp = await this.api.postSelection(this.sessionId, body);
        this.selected = new Set(resp.indices);
        this.onChange?.(this.selected);
        return resp;
    }
}
